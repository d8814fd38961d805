#include "coalflow/gaussian_field.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <map>

namespace coalflow {

GridSpec make_grid(double lo, double hi, double h) {
    if (!(h > 0.0) || !std::isfinite(lo) || !std::isfinite(hi) || hi < lo)
        throw ConfigInvalid("make_grid needs finite lo <= hi and h > 0");
    GridSpec g;
    g.h = h;
    g.x0 = std::floor(lo / h) * h;
    g.cells = (long long)std::ceil((hi - g.x0) / h);
    if (g.cells < 1) g.cells = 1;
    while (g.right() < hi) ++g.cells;
    return g;
}

NoiseSlab make_slab(const GridSpec& grid, double dt, RngStream& rng) {
    if (grid.cells <= 0 || !(dt > 0.0))
        throw ConfigInvalid("make_slab needs cells > 0 and dt > 0");
    NoiseSlab s;
    s.grid = grid;
    s.dt = dt;
    s.increments.resize((size_t)grid.cells);
    const double scale = std::sqrt(grid.h * dt);
    for (double& v : s.increments) v = rng.normal() * scale;
    return s;
}

std::vector<NoiseSlab> make_slabs(const GridSpec& grid, long long steps, double dt,
                                  RngStream& rng) {
    if (steps < 0) throw ConfigInvalid("make_slabs needs steps >= 0");
    std::vector<NoiseSlab> out;
    out.reserve((size_t)steps);
    for (long long k = 0; k < steps; ++k) out.push_back(make_slab(grid, dt, rng));
    return out;
}

std::vector<NoiseSlab> coarsen(const std::vector<NoiseSlab>& fine, long long factor) {
    if (factor < 1) throw ConfigInvalid("coarsen factor must be >= 1");
    if (fine.empty() || (long long)fine.size() % factor != 0)
        throw GridMismatch("coarsen factor must divide the slab count");
    for (const NoiseSlab& s : fine)
        if (!(s.grid == fine.front().grid) || s.dt != fine.front().dt)
            throw GridMismatch("coarsen needs identical grids and dt across slabs");
    std::vector<NoiseSlab> out;
    out.reserve(fine.size() / (size_t)factor);
    for (size_t i = 0; i < fine.size(); i += (size_t)factor) {
        NoiseSlab c;
        c.grid = fine[i].grid;
        c.dt = fine[i].dt * (double)factor;
        c.increments = fine[i].increments;
        for (long long j = 1; j < factor; ++j)
            for (size_t cell = 0; cell < c.increments.size(); ++cell)
                c.increments[cell] += fine[i + (size_t)j].increments[cell];
        out.push_back(std::move(c));
    }
    return out;
}

std::vector<double> sample_field_at(const Kernel& kernel, const std::vector<double>& points,
                                    RngStream& rng) {
    if (points.empty()) return {};
    for (double p : points)
        if (!std::isfinite(p)) throw DegenerateInput("field evaluation point is not finite");

    // collapse exact duplicates: the field is a function, equal points must
    // receive equal values
    std::map<double, int> index_of;
    std::vector<double> unique;
    std::vector<int> slot(points.size());
    for (size_t i = 0; i < points.size(); ++i) {
        auto [it, inserted] = index_of.try_emplace(points[i], (int)unique.size());
        if (inserted) unique.push_back(points[i]);
        slot[i] = it->second;
    }

    const int n = (int)unique.size();
    Eigen::VectorXd z(n);
    for (int i = 0; i < n; ++i) z(i) = rng.normal();  // fixed draw count: keeps the
                                                      // stream position independent of
                                                      // the jitter level used below
    Eigen::VectorXd values;
    if (n == 1) {
        values = z;
    } else {
        Eigen::MatrixXd gram(n, n);
        for (int i = 0; i < n; ++i) {
            gram(i, i) = 1.0;
            for (int j = i + 1; j < n; ++j)
                gram(i, j) = gram(j, i) = kernel(unique[i] - unique[j]);
        }
        bool done = false;
        for (double jitter : {0.0, 1e-12, 1e-10, 1e-8}) {
            Eigen::MatrixXd m = gram;
            if (jitter > 0.0) m.diagonal().array() += jitter;
            Eigen::LLT<Eigen::MatrixXd> llt(m);
            if (llt.info() == Eigen::Success) {
                values = llt.matrixL() * z;
                done = true;
                break;
            }
        }
        if (!done)
            throw FactorizationFailure("field covariance is not positive semidefinite "
                                       "within jitter tolerance");
    }

    std::vector<double> out(points.size());
    for (size_t i = 0; i < points.size(); ++i) out[i] = values(slot[i]);
    return out;
}

} // namespace coalflow
