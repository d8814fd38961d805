#pragma once

#include "coalflow/errors.hpp"
#include "coalflow/kernels.hpp"
#include "coalflow/rng.hpp"

#include <cmath>
#include <cstdint>
#include <vector>

namespace coalflow {

/// Uniform spatial grid of cells; x0 is snapped to a multiple of h so every
/// cell has a stable absolute index independent of the window placement.
struct GridSpec {
    double x0 = 0.0;       // left edge
    double h = 0.01;       // cell width
    long long cells = 0;

    double right() const { return x0 + h * cells; }
    long long base_index() const { return (long long)std::llround(x0 / h); }
    /// Midpoint from the absolute cell index: bit-identical across windows
    /// that share h, regardless of origin.
    double midpoint(long long cell) const {
        return ((double)(base_index() + cell) + 0.5) * h;
    }
    bool operator==(const GridSpec& o) const {
        return x0 == o.x0 && h == o.h && cells == o.cells;
    }
};

/// Smallest snapped grid covering [lo, hi].
GridSpec make_grid(double lo, double hi, double h);

/// One time slice of discretized space-time white noise: the mass of W on
/// cell c over an interval of length dt, i.e. independent N(0, h*dt) values.
struct NoiseSlab {
    GridSpec grid;
    double dt = 0.0;
    std::vector<double> increments;  // one per cell

    double increment(long long cell) const { return increments[(size_t)cell]; }
};

NoiseSlab make_slab(const GridSpec& grid, double dt, RngStream& rng);

/// `steps` consecutive-in-time slabs from one stream.
std::vector<NoiseSlab> make_slabs(const GridSpec& grid, long long steps, double dt,
                                  RngStream& rng);

/// Aggregate groups of `factor` consecutive-in-time slabs by elementwise
/// sum (white noise is additive over time); dt_out = factor * dt_in.
std::vector<NoiseSlab> coarsen(const std::vector<NoiseSlab>& fine, long long factor);

/// Lazily evaluated white noise over an unbounded step/cell index set.
/// Increments come from a counter-based stream keyed by (step, absolute
/// cell), so enlarging the window reproduces the same noise on shared cells.
class WhiteNoiseField {
public:
    WhiteNoiseField(RngStream base, GridSpec grid, double dt)
        : base_(base), grid_(grid), dt_(dt), scale_(std::sqrt(grid.h * dt)) {}

    const GridSpec& grid() const { return grid_; }
    double dt() const { return dt_; }

    double increment(long long step, long long cell) const {
        const long long abs_cell = grid_.base_index() + cell;
        const std::uint64_t zz =
            abs_cell >= 0 ? 2ull * (std::uint64_t)abs_cell : 2ull * (std::uint64_t)(-abs_cell) - 1ull;
        if (zz >> 32)
            throw WindowTooSmall("white-noise cell index out of addressable range");
        return base_.normal_at(((std::uint64_t)step << 32) | zz) * scale_;
    }

    /// Same noise field on a different window (h must match).
    WhiteNoiseField with_grid(const GridSpec& grid) const {
        if (grid.h != grid_.h)
            throw GridMismatch("white-noise window must keep the cell width");
        return WhiteNoiseField(base_, grid, dt_);
    }

private:
    RngStream base_;
    GridSpec grid_;
    double dt_;
    double scale_;
};

/// Single-step view of a WhiteNoiseField with the NoiseSlab access shape.
struct LazySlab {
    const WhiteNoiseField* field = nullptr;
    long long step = 0;

    double increment(long long cell) const { return field->increment(step, cell); }
};

inline LazySlab slab_at(const WhiteNoiseField& f, long long step) { return LazySlab{&f, step}; }

inline const GridSpec& grid_of(const NoiseSlab& s) { return s.grid; }
inline const GridSpec& grid_of(const LazySlab& s) { return s.field->grid(); }
inline double dt_of(const NoiseSlab& s) { return s.dt; }
inline double dt_of(const LazySlab& s) { return s.field->dt(); }

namespace detail {

template <class SlabLike, class Weight>
double integrate_slab(const SlabLike& slab, double x, double radius, Weight w) {
    const GridSpec& g = grid_of(slab);
    if (g.cells <= 0) throw WindowTooSmall("empty noise grid");
    const double lo = x - radius, hi = x + radius;
    if (lo < g.x0 || hi > g.right())
        throw WindowTooSmall("mollifier support leaves the noise window");
    // cell range from absolute indices so the covered set (and hence the
    // result, bit for bit) does not depend on the window origin
    const long long base = g.base_index();
    long long c0 = (long long)std::floor(lo / g.h) - base;
    long long c1 = (long long)std::floor(hi / g.h) - base;
    if (c0 < 0) c0 = 0;
    if (c1 >= g.cells) c1 = g.cells - 1;
    double acc = 0.0;
    for (long long c = c0; c <= c1; ++c)
        acc += w(x - g.midpoint(c)) * slab.increment(c);
    return acc;
}

} // namespace detail

/// int psi_eps(x - p) W(dp, dt-slice) by the midpoint rule; variance ~ dt.
template <class SlabLike>
double integrate_against(const SlabLike& slab, const ScaledMollifier& psi, double x) {
    return detail::integrate_slab(slab, x, psi.radius(),
                                  [&](double u) { return psi.value(u); });
}

/// int psi_eps'(x - p) W(dp, dt-slice), the linearization weight.
template <class SlabLike>
double integrate_against_derivative(const SlabLike& slab, const ScaledMollifier& psi, double x) {
    return detail::integrate_slab(slab, x, psi.radius(),
                                  [&](double u) { return psi.derivative(u); });
}

/// One joint draw of the stationary Gaussian field xi at the given points:
/// mean zero, covariance Gamma(p_i - p_j).  Exact duplicate points receive
/// identical values; near-singular Gram matrices are factorized with an
/// escalating diagonal jitter (1e-12, 1e-10, 1e-8) before giving up.
std::vector<double> sample_field_at(const Kernel& kernel, const std::vector<double>& points,
                                    RngStream& rng);

} // namespace coalflow
