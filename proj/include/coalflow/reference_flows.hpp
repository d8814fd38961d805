#pragma once

#include "coalflow/flow_engine.hpp"

#include <functional>

namespace coalflow {

/// Scalar SDE data dx = a(x) dt + b(x) dw started at u0.
struct SdeSpec {
    std::function<double(double)> drift;      // a
    std::function<double(double)> diffusion;  // b, >= 0 where it is a gap diffusion
    double u0 = 0.0;
};

/// Euler-Maruyama chain on [0, 1]:
/// x_{k+1} = x_k + (1/m) a(x_k) + (1/sqrt(m)) b(x_k) xi_k.  Returns m+1 states.
std::vector<double> euler_sde(const SdeSpec& spec, long long m, RngStream& rng);

/// l-point motion with jointly Gaussian increments of covariance
/// (1/steps) * [Gamma(x_i - x_j)] per step; the reference the direct scheme is
/// measured against (they share the factorization machinery).
FlowPath harris_l_point(const Kernel& kernel, const std::vector<double>& starts,
                        long long steps, RngStream rng);

/// Coalescing system of independent Brownian clusters: positions plus the
/// cluster membership of every tracked start at every step.
struct ArratiaPath {
    FlowPath path;                             // (steps+1) x l positions
    std::vector<std::vector<int>> cluster_of;  // (steps+1) x l, id = lowest member index

    long long terminal_clusters() const;
};

/// Clusters evolve by independent N(0, 1/steps) increments; adjacent clusters
/// that cross or touch within a step merge at the midpoint of their proposed
/// positions (cascading until the order is restored) and share increments
/// thereafter.  Coincident starts are one cluster from step 0.
ArratiaPath arratia_l_point(const std::vector<double>& starts, long long steps, RngStream rng);

/// Probability that two independent unit-speed Brownian particles at initial
/// distance d meet by time t: 2 Phi(-d / sqrt(2 t)).
double coalescence_probability(double d, double t);

/// White-noise run at step 1/(fine_factor * config.n_steps) on the given
/// slabs.  The coarse comparison run consumes coarsen(fine_slabs, fine_factor)
/// so both live on one noise realization.
FlowPath fine_reference(const FlowConfig& config, long long fine_factor,
                        const std::vector<NoiseSlab>& fine_slabs);

/// CSV rows `replica,start_index,step,time,position,cluster_id`.
void write_arratia_csv(std::ostream& os, const ArratiaPath& arratia, std::uint64_t replica,
                       bool header = true);

} // namespace coalflow
