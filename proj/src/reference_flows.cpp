#include "coalflow/reference_flows.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace coalflow {

namespace {

// contiguous run of tracked starts moving as one particle
struct ClusterRange {
    double pos = 0.0;
    size_t lo = 0, hi = 0;  // member start indices [lo, hi]; id = lo
};

} // namespace

std::vector<double> euler_sde(const SdeSpec& spec, long long m, RngStream& rng) {
    if (!spec.drift || !spec.diffusion)
        throw ConfigInvalid("euler_sde needs drift and diffusion callables");
    if (!std::isfinite(spec.u0)) throw ConfigInvalid("euler_sde start must be finite");
    if (m < 1) throw ConfigInvalid("euler_sde needs m >= 1");
    const double dt = 1.0 / (double)m;
    const double root_dt = std::sqrt(dt);
    std::vector<double> x;
    x.reserve((size_t)m + 1);
    x.push_back(spec.u0);
    for (long long k = 0; k < m; ++k) {
        const double xk = x.back();
        x.push_back(xk + dt * spec.drift(xk) + root_dt * spec.diffusion(xk) * rng.normal());
    }
    return x;
}

FlowPath harris_l_point(const Kernel& kernel, const std::vector<double>& starts,
                        long long steps, RngStream rng) {
    if (steps < 1) throw ConfigInvalid("harris_l_point needs steps >= 1");
    FlowConfig config;
    config.scheme = Scheme::DirectGP;
    config.kernel = kernel;
    config.n_steps = steps;
    config.starts = starts;
    return run_flow(config, rng);
}

long long ArratiaPath::terminal_clusters() const {
    if (cluster_of.empty() || cluster_of.back().empty()) return 0;
    long long count = 1;
    const auto& last = cluster_of.back();
    for (size_t j = 1; j < last.size(); ++j) count += last[j] != last[j - 1];
    return count;
}

ArratiaPath arratia_l_point(const std::vector<double>& starts, long long steps, RngStream rng) {
    if (starts.empty()) throw ConfigInvalid("arratia_l_point needs at least one start");
    for (double u : starts)
        if (!std::isfinite(u)) throw ConfigInvalid("arratia_l_point starts must be finite");
    if (!std::is_sorted(starts.begin(), starts.end()))
        throw ConfigInvalid("arratia_l_point starts must be sorted");
    if (steps < 1) throw ConfigInvalid("arratia_l_point needs steps >= 1");

    const size_t l = starts.size();
    std::vector<ClusterRange> clusters;
    for (size_t j = 0; j < l; ++j) {
        if (!clusters.empty() && clusters.back().pos == starts[j])
            clusters.back().hi = j;  // coincident starts are one cluster
        else
            clusters.push_back({starts[j], j, j});
    }

    ArratiaPath out;
    out.path.config.scheme = Scheme::DirectGP;
    out.path.config.kernel = Kernel::indicator();
    out.path.config.n_steps = steps;
    out.path.config.starts = starts;
    out.path.seed = rng.seed();
    out.path.stream_id = rng.stream_id();
    out.path.positions.reserve((size_t)steps + 1);
    out.cluster_of.reserve((size_t)steps + 1);

    const auto record = [&] {
        std::vector<double> row(l);
        std::vector<int> ids(l);
        for (const ClusterRange& c : clusters)
            for (size_t j = c.lo; j <= c.hi; ++j) {
                row[j] = c.pos;
                ids[j] = (int)c.lo;
            }
        out.path.positions.push_back(std::move(row));
        out.cluster_of.push_back(std::move(ids));
    };
    record();

    const double scale = 1.0 / std::sqrt((double)steps);
    std::vector<ClusterRange> merged;
    for (long long k = 0; k < steps; ++k) {
        for (ClusterRange& c : clusters) c.pos += scale * rng.normal();
        merged.clear();
        for (ClusterRange c : clusters) {
            while (!merged.empty() && merged.back().pos >= c.pos) {
                c.pos = 0.5 * (merged.back().pos + c.pos);
                c.lo = merged.back().lo;
                merged.pop_back();
            }
            merged.push_back(c);
        }
        clusters.swap(merged);
        record();
    }
    return out;
}

double coalescence_probability(double d, double t) {
    if (std::isnan(d) || !(d > 0.0)) throw ConfigInvalid("meeting probability needs d > 0");
    if (!(t > 0.0) || !std::isfinite(t)) throw ConfigInvalid("meeting probability needs finite t > 0");
    return std::erfc(d / (2.0 * std::sqrt(t)));
}

FlowPath fine_reference(const FlowConfig& config, long long fine_factor,
                        const std::vector<NoiseSlab>& fine_slabs) {
    if (fine_factor < 1) throw ConfigInvalid("fine factor must be >= 1");
    FlowConfig fine = config;
    fine.n_steps = config.n_steps * fine_factor;
    return run_flow_on_slabs(fine, fine_slabs);
}

void write_arratia_csv(std::ostream& os, const ArratiaPath& arratia, std::uint64_t replica,
                       bool header) {
    if (header) os << "replica,start_index,step,time,position,cluster_id\n";
    if (arratia.path.positions.empty()) return;
    char buf[40];
    const long long n = arratia.path.steps();
    for (size_t j = 0; j < arratia.path.positions.front().size(); ++j)
        for (long long k = 0; k <= n; ++k) {
            const double t = n == 0 ? 0.0 : (double)k / (double)n;
            os << replica << ',' << j << ',' << k << ',';
            std::snprintf(buf, sizeof buf, "%.17g", t);
            os << buf << ',';
            std::snprintf(buf, sizeof buf, "%.17g", arratia.path.positions[k][j]);
            os << buf << ',' << arratia.cluster_of[k][j] << '\n';
        }
}

} // namespace coalflow
