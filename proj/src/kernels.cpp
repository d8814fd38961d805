#include "coalflow/kernels.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace coalflow {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

/// Composite Simpson on [a, b].
double simpson(const std::function<double(double)>& f, double a, double b, int panels) {
    if (b <= a) return 0.0;
    const double h = (b - a) / (2 * panels);
    double odd = 0.0, even = 0.0;
    for (int i = 1; i < 2 * panels; i += 2) odd += f(a + i * h);
    for (int i = 2; i < 2 * panels; i += 2) even += f(a + i * h);
    return h / 3.0 * (f(a) + f(b) + 4.0 * odd + 2.0 * even);
}

/// Autocorrelation of the base mollifier, R(s) = int psi(q) psi(s+q) dq,
/// tabulated on s in [0, 2] and normalized so the value at 0 is exactly 1.
struct AutocorrTable {
    static constexpr int kPoints = 2049;  // grid step 2/2048
    static constexpr double kStep = 2.0 / (kPoints - 1);
    std::vector<double> values;
    double half_curvature = 0.0;  // -R''(0)/(2 R(0)) = int psi'^2 / (2 int psi^2)

    explicit AutocorrTable(const Mollifier& psi) {
        values.resize(kPoints);
        for (int i = 0; i < kPoints; ++i) {
            const double s = i * kStep;
            const double hi = 1.0 - s;
            values[i] = (hi <= -1.0) ? 0.0
                                     : simpson([&](double q) { return psi.value(q) * psi.value(s + q); },
                                               -1.0, hi, 256);
        }
        const double r0 = values[0];
        if (!(r0 > 0.0))
            throw std::invalid_argument("mollifier has zero squared mass");
        for (double& v : values) v /= r0;
        values[0] = 1.0;
        half_curvature = psi.derivative_energy() / (2.0 * r0);
    }

    /// 1 - R(s)/R(0) without cancellation: exact quadratic Taylor form below
    /// one table cell (where interpolation error would dominate the tiny
    /// true value), table interpolation elsewhere.
    double one_minus(double s) const {
        s = std::abs(s);
        if (s < kStep) return half_curvature * s * s;
        return 1.0 - eval(s);
    }

    /// 4-point Lagrange cubic on the uniform grid; even reflection below 0,
    /// identically zero beyond s = 2.
    double eval(double s) const {
        s = std::abs(s);
        if (s >= 2.0) return 0.0;
        if (s < kStep) return 1.0 - half_curvature * s * s;
        const double step = kStep;
        double pos = s / step;
        int i = std::min((int)pos, kPoints - 2);
        double u = pos - i;
        auto y = [&](int j) -> double {
            if (j < 0) return values[-j];          // R is even
            if (j >= kPoints) return 0.0;          // compact support
            return values[j];
        };
        const double ym1 = y(i - 1), y0 = y(i), y1 = y(i + 1), y2 = y(i + 2);
        return ym1 * (-u * (u - 1.0) * (u - 2.0) / 6.0) +
               y0 * ((u + 1.0) * (u - 1.0) * (u - 2.0) / 2.0) +
               y1 * (-(u + 1.0) * u * (u - 2.0) / 2.0) +
               y2 * ((u + 1.0) * u * (u - 1.0) / 6.0);
    }
};

} // namespace

// ---------------------------------------------------------------------------
// Mollifier
// ---------------------------------------------------------------------------

Mollifier Mollifier::polynomial_bump() {
    const double c = std::sqrt(315.0) / 16.0;  // int psi^2 = 1 exactly
    Mollifier m;
    m.name = "poly_bump";
    m.value = [c](double u) {
        if (std::abs(u) >= 1.0) return 0.0;
        const double w = 1.0 - u * u;
        return c * w * w;
    };
    m.derivative = [c](double u) {
        if (std::abs(u) >= 1.0) return 0.0;
        return -4.0 * c * u * (1.0 - u * u);
    };
    return m;
}

double Mollifier::squared_mass() const {
    return simpson([this](double u) { double v = value(u); return v * v; }, -1.0, 1.0, 1 << 13);
}

double Mollifier::derivative_energy() const {
    return simpson([this](double u) { double v = derivative(u); return v * v; }, -1.0, 1.0, 1 << 13);
}

double ScaledMollifier::value(double u) const {
    return psi.value(u / eps) / std::sqrt(eps);
}

double ScaledMollifier::derivative(double u) const {
    return psi.derivative(u / eps) / (eps * std::sqrt(eps));
}

// ---------------------------------------------------------------------------
// Kernel
// ---------------------------------------------------------------------------

struct Kernel::Impl {
    Family family;
    // Mollified
    ScaledMollifier gen;
    std::shared_ptr<const AutocorrTable> autocorr;
    // Table
    std::vector<double> xs, ys;

    double support = kInf;
    double lipschitz = kInf;
};

Kernel Kernel::gaussian() {
    auto impl = std::make_shared<Impl>();
    impl->family = Family::Gaussian;
    impl->support = kInf;
    impl->lipschitz = std::exp(-0.5);  // max |x e^{-x^2/2}|
    return Kernel(std::move(impl));
}

Kernel Kernel::indicator() {
    auto impl = std::make_shared<Impl>();
    impl->family = Family::Indicator;
    impl->support = 0.0;
    impl->lipschitz = kInf;
    return Kernel(std::move(impl));
}

Kernel Kernel::mollified(Mollifier psi, double eps) {
    if (!(eps > 0.0)) throw std::invalid_argument("mollified kernel needs eps > 0");
    auto impl = std::make_shared<Impl>();
    impl->family = Family::Mollified;
    impl->gen = ScaledMollifier{std::move(psi), eps};
    impl->autocorr = std::make_shared<AutocorrTable>(impl->gen.psi);
    impl->support = 2.0 * eps;
    // slope bound from the table, scaled by 1/eps
    double max_slope = 0.0;
    const auto& v = impl->autocorr->values;
    const double step = 2.0 / (AutocorrTable::kPoints - 1);
    for (size_t i = 1; i < v.size(); ++i)
        max_slope = std::max(max_slope, std::abs(v[i] - v[i - 1]) / step);
    impl->lipschitz = max_slope / eps;
    return Kernel(std::move(impl));
}

Kernel Kernel::table(std::vector<double> xs, std::vector<double> values) {
    if (xs.size() < 2 || xs.size() != values.size())
        throw std::invalid_argument("table kernel needs matching xs/values, size >= 2");
    if (xs.front() != 0.0 || !std::is_sorted(xs.begin(), xs.end()))
        throw std::invalid_argument("table kernel abscissae must be sorted starting at 0");
    auto impl = std::make_shared<Impl>();
    impl->family = Family::Table;
    impl->support = xs.back();
    double max_slope = 0.0;
    for (size_t i = 1; i < xs.size(); ++i)
        if (xs[i] > xs[i - 1])
            max_slope = std::max(max_slope, std::abs(values[i] - values[i - 1]) / (xs[i] - xs[i - 1]));
    impl->lipschitz = max_slope;
    impl->xs = std::move(xs);
    impl->ys = std::move(values);
    return Kernel(std::move(impl));
}

double Kernel::operator()(double x) const {
    const double s = std::abs(x);
    switch (impl_->family) {
    case Family::Gaussian:
        return std::exp(-0.5 * s * s);
    case Family::Indicator:
        return s == 0.0 ? 1.0 : 0.0;
    case Family::Mollified:
        return std::clamp(impl_->autocorr->eval(s / impl_->gen.eps), -1.0, 1.0);
    case Family::Table: {
        const auto& xs = impl_->xs;
        const auto& ys = impl_->ys;
        if (s >= xs.back()) return 0.0;
        auto it = std::upper_bound(xs.begin(), xs.end(), s);
        size_t i = (size_t)std::distance(xs.begin(), it) - 1;
        if (xs[i + 1] == xs[i]) return ys[i];
        const double t = (s - xs[i]) / (xs[i + 1] - xs[i]);
        return ys[i] + t * (ys[i + 1] - ys[i]);
    }
    }
    return 0.0;
}

double Kernel::one_minus(double x) const {
    if (impl_->family == Family::Gaussian)
        return -std::expm1(-0.5 * x * x);
    if (impl_->family == Family::Mollified)
        return impl_->autocorr->one_minus(x / impl_->gen.eps);
    return 1.0 - (*this)(x);
}

Kernel::Family Kernel::family() const { return impl_->family; }

std::string Kernel::id() const {
    switch (impl_->family) {
    case Family::Gaussian: return "gaussian";
    case Family::Indicator: return "indicator";
    case Family::Mollified: return "mollified";
    case Family::Table: return "table";
    }
    return "?";
}

double Kernel::support_radius() const { return impl_->support; }
double Kernel::lipschitz_constant() const { return impl_->lipschitz; }

const ScaledMollifier& Kernel::generator() const {
    if (impl_->family != Family::Mollified)
        throw std::logic_error("generator() is defined for mollified kernels only");
    return impl_->gen;
}

double Kernel::epsilon() const { return generator().eps; }

// ---------------------------------------------------------------------------
// Functionals
// ---------------------------------------------------------------------------

double eval_gamma(const Kernel& kernel, double x) { return kernel(x); }

Kernel mollified_kernel(const Mollifier& psi, double eps) {
    return Kernel::mollified(psi, eps);
}

double compute_cm(const Kernel& kernel) {
    if (kernel.family() == Kernel::Family::Indicator)
        return kInf;  // (2 - 2*Gamma)/x^2 = 2/x^2 is unbounded near 0

    auto ratio = [&](double x) { return 2.0 * kernel.one_minus(x) / (x * x); };

    // Curvature limit -Gamma''(0): exact quadrature for mollified kernels,
    // second-difference estimate (step 1e-4) otherwise.
    double sup;
    if (kernel.is_mollified()) {
        const auto& g = kernel.generator();
        sup = g.psi.derivative_energy() / (g.eps * g.eps);
    } else {
        sup = ratio(1e-4);
    }

    const double support = kernel.support_radius();
    const double upper = std::isfinite(support) ? std::max(10.0, 4.0 * support) : 10.0;
    const double lower = 1e-6;
    const int n_log = 10000;
    for (int i = 0; i < n_log; ++i) {
        const double x = lower * std::pow(upper / lower, i / (n_log - 1.0));
        sup = std::max(sup, ratio(x));
    }
    const int n_lin = 1000;  // fine linear sweep near the origin
    for (int i = 1; i <= n_lin; ++i)
        sup = std::max(sup, ratio(0.01 * i / n_lin));
    return sup;
}

double compute_l2(const Mollifier& psi, double eps) {
    if (!(eps > 0.0)) throw std::invalid_argument("compute_l2 needs eps > 0");
    return psi.derivative_energy() / eps;
}

double epsilon_schedule(long long n) {
    if (n < 1) throw std::invalid_argument("epsilon_schedule needs n >= 1");
    const double m = (double)std::max(n, 27LL);  // keep loglog positive
    return std::pow(std::log(std::log(m)), -0.25);
}

bool check_positive_definite(const Kernel& kernel, const std::vector<double>& points) {
    if (points.empty()) return true;
    const int n = (int)points.size();
    Eigen::MatrixXd gram(n, n);
    for (int i = 0; i < n; ++i) {
        gram(i, i) = kernel(0.0);
        for (int j = i + 1; j < n; ++j)
            gram(i, j) = gram(j, i) = kernel(points[i] - points[j]);
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram, Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff() >= -1e-10 * n;
}

KernelFunctionals compute_functionals(const Kernel& kernel) {
    KernelFunctionals f;
    f.c_m = compute_cm(kernel);
    f.c_smooth = 0.5 * f.c_m;  // sup(2-2G)/x^2 = 2 sup(1-G)/x^2
    if (kernel.is_mollified())
        f.l_squared = compute_l2(kernel.generator().psi, kernel.epsilon());
    return f;
}

Kernel kernel_from_id(const std::string& id, double eps) {
    if (id == "gaussian") return Kernel::gaussian();
    if (id == "indicator") return Kernel::indicator();
    if (id == "mollified") return Kernel::mollified(Mollifier::polynomial_bump(), eps);
    throw std::invalid_argument("unknown kernel id: " + id);
}

} // namespace coalflow
