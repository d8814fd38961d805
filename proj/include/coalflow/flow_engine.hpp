#pragma once

#include "coalflow/errors.hpp"
#include "coalflow/gaussian_field.hpp"
#include "coalflow/kernels.hpp"
#include "coalflow/rng.hpp"

#include <cstdint>
#include <optional>
#include <ostream>
#include <vector>

namespace coalflow {

enum class Scheme { DirectGP, WhiteNoise };

/// A discrete flow run on the fixed horizon [0, 1].
struct FlowConfig {
    Scheme scheme = Scheme::DirectGP;
    Kernel kernel = Kernel::gaussian();
    long long n_steps = 100;
    std::vector<double> starts = {0.0};  // sorted u_1 <= ... <= u_l

    // white-noise discretization knobs
    double window_margin = 4.0;      // window = [min start - margin - r, max + margin + r]
    long long grid_refinement = 20;  // cell width h = eps / grid_refinement
};

struct FlowPath {
    std::vector<std::vector<double>> positions;  // (n_steps+1) x l
    FlowConfig config;
    std::uint64_t seed = 0, stream_id = 0;  // rng identity used for the run

    long long steps() const { return (long long)positions.size() - 1; }
    double time_at(long long k) const { return (double)k / (double)steps(); }
};

/// Coarse derivative recursion alongside the flow, with the fine-grid
/// reference exponential on the same noise.
struct DerivativePath {
    std::vector<double> coarse_times;                 // n+1
    std::vector<std::vector<double>> z;               // coarse flow, (n+1) x l
    std::vector<std::vector<double>> y;               // derivative recursion, (n+1) x l
    std::vector<double> fine_times;                   // N+1, N = n * fine_factor
    std::vector<std::vector<double>> eta;             // accumulated fine increments, (N+1) x l
    std::vector<std::vector<double>> y_reference;     // exp(eta - L^2 t / 2), (N+1) x l
    double l_squared = 0.0;
};

struct CoalescenceReport {
    // entry j covers the adjacent pair (j, j+1): first step from which the
    // gap magnitude stays below merge_tol through the end
    std::vector<std::optional<long long>> pair_merge_steps;
    long long order_violations = 0;  // states with gap < -merge_tol
    double min_gap = 0.0;            // most negative ordered gap observed
    double merge_tol = 0.0;

    long long merged_pairs() const;
    long long terminal_clusters() const;  // pairs not merged split clusters
};

/// One Euler step of every coordinate against a single joint field draw:
/// x + (1/sqrt(m)) * xi(x).
std::vector<double> step_direct(const std::vector<double>& positions, const Kernel& kernel,
                                long long m, RngStream& rng);

/// One Euler step against a white-noise slice: x + int psi_eps(x - p) W(dp, dt).
template <class SlabLike>
std::vector<double> step_white_noise(const std::vector<double>& positions,
                                     const ScaledMollifier& psi, const SlabLike& slab) {
    std::vector<double> out(positions.size());
    for (size_t j = 0; j < positions.size(); ++j)
        out[j] = positions[j] + integrate_against(slab, psi, positions[j]);
    return out;
}

/// Iterates the configured scheme n_steps times on [0,1], recording every
/// intermediate position.  WhiteNoise runs use a lazy noise field over a
/// window [min start - margin, max start + margin] (plus mollifier support),
/// retried once with doubled margin if a path escapes.
FlowPath run_flow(const FlowConfig& config, RngStream rng);

/// WhiteNoise run on caller-provided slabs (one per step, shared noise);
/// requires config.n_steps == slabs.size().  No window retry: escapes throw.
FlowPath run_flow_on_slabs(const FlowConfig& config, const std::vector<NoiseSlab>& slabs);

/// Piecewise-linear interpolant of one coordinate; t outside [0,1] clamps.
double interpolate(const FlowPath& path, size_t start_index, double t);

/// One-point comparison chain: y_0 = u, y_{k+1} = y_k + scale * eta_k.
/// Default scale 1/sqrt(n); pass an explicit scale to test the unit-step
/// reading.
std::vector<double> lemma1_one_point(double u, long long n, RngStream& rng,
                                     std::optional<double> scale = {});

/// Two-point gap chain: z_0 = d0, z_{k+1} = z_k + scale*sqrt(2-2*Gamma(z_k))*eta_k,
/// default scale 1/sqrt(n).
std::vector<double> lemma1_two_point(double d0, const Kernel& kernel, long long n,
                                     RngStream& rng, std::optional<double> scale = {});

/// Coarse white-noise flow plus the multiplicative derivative recursion
/// y_{k+1} = y_k * (1 + int psi_eps'(z_k - p) W), coupled through shared fine
/// slabs (the coarse run consumes coarsen(fine_slabs, fine_factor)); the
/// fine grid also carries the reference eta and exp(eta - L^2 t / 2).
DerivativePath derivative_path(const FlowConfig& config, const std::vector<NoiseSlab>& fine_slabs,
                               long long fine_factor);

/// Merge/ordering observables of a multi-point path under a tolerance.
CoalescenceReport analyze_coalescence(const FlowPath& path, double merge_tol);

/// CSV rows `replica,start_index,step,time,position`, 17 significant digits.
void write_flow_csv(std::ostream& os, const FlowPath& path, std::uint64_t replica,
                    bool header = true);

} // namespace coalflow
