#include "coalflow/flow_engine.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

namespace coalflow {

namespace {

void validate(const FlowConfig& config) {
    if (config.starts.empty()) throw ConfigInvalid("flow needs at least one start");
    for (double u : config.starts)
        if (!std::isfinite(u)) throw ConfigInvalid("flow starts must be finite");
    if (!std::is_sorted(config.starts.begin(), config.starts.end()))
        throw ConfigInvalid("flow starts must be sorted");
    if (config.n_steps < 0) throw ConfigInvalid("n_steps must be nonnegative");
    if (config.scheme == Scheme::WhiteNoise && !config.kernel.is_mollified())
        throw ConfigInvalid("white-noise runs need a mollified kernel with a generating bump");
    if (!(config.window_margin > 0.0)) throw ConfigInvalid("window margin must be positive");
    if (config.grid_refinement < 1) throw ConfigInvalid("grid refinement must be >= 1");
}

} // namespace

long long CoalescenceReport::merged_pairs() const {
    long long count = 0;
    for (const auto& step : pair_merge_steps) count += step.has_value();
    return count;
}

long long CoalescenceReport::terminal_clusters() const {
    return (long long)pair_merge_steps.size() + 1 - merged_pairs();
}

std::vector<double> step_direct(const std::vector<double>& positions, const Kernel& kernel,
                                long long m, RngStream& rng) {
    if (m < 1) throw ConfigInvalid("step scale m must be positive");
    const std::vector<double> xi = sample_field_at(kernel, positions, rng);
    const double scale = 1.0 / std::sqrt((double)m);
    std::vector<double> out(positions.size());
    for (size_t j = 0; j < positions.size(); ++j) out[j] = positions[j] + scale * xi[j];
    return out;
}

FlowPath run_flow(const FlowConfig& config, RngStream rng) {
    validate(config);
    FlowPath path;
    path.config = config;
    path.seed = rng.seed();
    path.stream_id = rng.stream_id();
    path.positions.reserve((size_t)config.n_steps + 1);
    path.positions.push_back(config.starts);
    if (config.n_steps == 0) return path;

    if (config.scheme == Scheme::DirectGP) {
        for (long long k = 0; k < config.n_steps; ++k)
            path.positions.push_back(
                step_direct(path.positions.back(), config.kernel, config.n_steps, rng));
        return path;
    }

    const ScaledMollifier& psi = config.kernel.generator();
    const double h = psi.eps / (double)config.grid_refinement;
    const double dt = 1.0 / (double)config.n_steps;
    double margin = config.window_margin;
    for (int attempt = 0;; ++attempt) {
        try {
            const GridSpec grid = make_grid(config.starts.front() - margin - psi.eps,
                                            config.starts.back() + margin + psi.eps, h);
            const WhiteNoiseField field(rng, grid, dt);
            path.positions.assign(1, config.starts);
            for (long long k = 0; k < config.n_steps; ++k)
                path.positions.push_back(
                    step_white_noise(path.positions.back(), psi, slab_at(field, k)));
            return path;
        } catch (const WindowTooSmall&) {
            // the lazy field keys noise by absolute cell, so the wider retry
            // reproduces the identical trajectory where it was covered
            if (attempt >= 1) throw;
            margin *= 2.0;
        }
    }
}

FlowPath run_flow_on_slabs(const FlowConfig& config, const std::vector<NoiseSlab>& slabs) {
    validate(config);
    if (config.scheme != Scheme::WhiteNoise)
        throw ConfigInvalid("slab-driven runs use the white-noise scheme");
    if ((long long)slabs.size() != config.n_steps)
        throw GridMismatch("need exactly one noise slab per step");
    const ScaledMollifier& psi = config.kernel.generator();
    FlowPath path;
    path.config = config;
    path.positions.reserve(slabs.size() + 1);
    path.positions.push_back(config.starts);
    for (const NoiseSlab& slab : slabs)
        path.positions.push_back(step_white_noise(path.positions.back(), psi, slab));
    return path;
}

double interpolate(const FlowPath& path, size_t start_index, double t) {
    if (path.positions.empty() || start_index >= path.positions.front().size())
        throw ConfigInvalid("interpolate needs a tracked start index");
    const long long n = path.steps();
    if (n == 0) return path.positions[0][start_index];
    t = std::clamp(t, 0.0, 1.0);
    const double pos = t * (double)n;
    long long k = (long long)pos;
    if (k >= n) k = n - 1;
    const double w = pos - (double)k;
    return (1.0 - w) * path.positions[k][start_index] +
           w * path.positions[k + 1][start_index];
}

std::vector<double> lemma1_one_point(double u, long long n, RngStream& rng,
                                     std::optional<double> scale) {
    if (n < 1) throw ConfigInvalid("chain length must be positive");
    const double s = scale ? *scale : 1.0 / std::sqrt((double)n);
    std::vector<double> y;
    y.reserve((size_t)n + 1);
    y.push_back(u);
    for (long long k = 0; k < n; ++k) y.push_back(y.back() + s * rng.normal());
    return y;
}

std::vector<double> lemma1_two_point(double d0, const Kernel& kernel, long long n,
                                     RngStream& rng, std::optional<double> scale) {
    if (!(d0 >= 0.0)) throw ConfigInvalid("initial gap must be nonnegative");
    if (n < 1) throw ConfigInvalid("chain length must be positive");
    const double s = scale ? *scale : 1.0 / std::sqrt((double)n);
    std::vector<double> z;
    z.reserve((size_t)n + 1);
    z.push_back(d0);
    for (long long k = 0; k < n; ++k) {
        const double diffusion = std::sqrt(std::max(0.0, 2.0 * kernel.one_minus(z.back())));
        z.push_back(z.back() + s * diffusion * rng.normal());
    }
    return z;
}

DerivativePath derivative_path(const FlowConfig& config,
                               const std::vector<NoiseSlab>& fine_slabs,
                               long long fine_factor) {
    validate(config);
    if (config.scheme != Scheme::WhiteNoise)
        throw ConfigInvalid("the derivative recursion runs on the white-noise scheme");
    if (fine_factor < 1) throw ConfigInvalid("fine factor must be >= 1");
    if ((long long)fine_slabs.size() != config.n_steps * fine_factor)
        throw GridMismatch("need n_steps * fine_factor fine slabs");

    const ScaledMollifier& psi = config.kernel.generator();
    const size_t l = config.starts.size();
    const long long n = config.n_steps;
    const long long fine_n = n * fine_factor;

    DerivativePath out;
    // quadratic-variation rate of the derivative-weight integral: the energy
    // of the scaled bump's derivative
    out.l_squared = psi.psi.derivative_energy() / (psi.eps * psi.eps);

    out.coarse_times.resize((size_t)n + 1);
    for (long long k = 0; k <= n; ++k)
        out.coarse_times[k] = n == 0 ? 0.0 : (double)k / (double)n;
    out.z.assign((size_t)n + 1, std::vector<double>(l));
    out.y.assign((size_t)n + 1, std::vector<double>(l, 1.0));
    out.z[0] = config.starts;

    out.fine_times.resize((size_t)fine_n + 1);
    for (long long k = 0; k <= fine_n; ++k)
        out.fine_times[k] = fine_n == 0 ? 0.0 : (double)k / (double)fine_n;
    out.eta.assign((size_t)fine_n + 1, std::vector<double>(l, 0.0));
    out.y_reference.assign((size_t)fine_n + 1, std::vector<double>(l, 1.0));
    if (n == 0) return out;

    const std::vector<NoiseSlab> coarse = coarsen(fine_slabs, fine_factor);
    for (long long k = 0; k < n; ++k)
        for (size_t j = 0; j < l; ++j) {
            const double zkj = out.z[k][j];
            out.y[k + 1][j] =
                out.y[k][j] * (1.0 + integrate_against_derivative(coarse[k], psi, zkj));
            out.z[k + 1][j] = zkj + integrate_against(coarse[k], psi, zkj);
        }

    std::vector<double> zf = config.starts;
    for (long long k = 0; k < fine_n; ++k) {
        for (size_t j = 0; j < l; ++j) {
            out.eta[k + 1][j] =
                out.eta[k][j] + integrate_against_derivative(fine_slabs[k], psi, zf[j]);
            zf[j] += integrate_against(fine_slabs[k], psi, zf[j]);
            out.y_reference[k + 1][j] =
                std::exp(out.eta[k + 1][j] - 0.5 * out.l_squared * out.fine_times[k + 1]);
        }
    }
    return out;
}

CoalescenceReport analyze_coalescence(const FlowPath& path, double merge_tol) {
    if (!(merge_tol > 0.0)) throw ConfigInvalid("merge tolerance must be positive");
    if (path.positions.empty()) throw DegenerateInput("coalescence needs a recorded path");
    const size_t l = path.positions.front().size();

    CoalescenceReport rep;
    rep.merge_tol = merge_tol;
    rep.min_gap = std::numeric_limits<double>::infinity();
    if (l < 2) return rep;

    rep.pair_merge_steps.assign(l - 1, std::nullopt);
    for (size_t j = 0; j + 1 < l; ++j) {
        std::optional<long long> merged;
        for (long long k = (long long)path.positions.size() - 1; k >= 0; --k) {
            const double gap = path.positions[k][j + 1] - path.positions[k][j];
            if (!(std::abs(gap) < merge_tol)) break;
            merged = k;
        }
        rep.pair_merge_steps[j] = merged;
    }
    for (const auto& row : path.positions)
        for (size_t j = 0; j + 1 < l; ++j) {
            const double gap = row[j + 1] - row[j];
            rep.min_gap = std::min(rep.min_gap, gap);
            if (gap < -merge_tol) ++rep.order_violations;
        }
    return rep;
}

void write_flow_csv(std::ostream& os, const FlowPath& path, std::uint64_t replica,
                    bool header) {
    if (header) os << "replica,start_index,step,time,position\n";
    if (path.positions.empty()) return;
    char buf[40];
    const long long n = path.steps();
    for (size_t j = 0; j < path.positions.front().size(); ++j)
        for (long long k = 0; k <= n; ++k) {
            const double t = n == 0 ? 0.0 : (double)k / (double)n;
            os << replica << ',' << j << ',' << k << ',';
            std::snprintf(buf, sizeof buf, "%.17g", t);
            os << buf << ',';
            std::snprintf(buf, sizeof buf, "%.17g", path.positions[k][j]);
            os << buf << '\n';
        }
}

} // namespace coalflow
