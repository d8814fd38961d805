#pragma once

#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace coalflow {

/// Compactly supported C^1 bump on [-1, 1] with unit squared mass,
/// the generating function of mollified covariance kernels.
struct Mollifier {
    std::string name;
    std::function<double(double)> value;      // 0 outside [-1, 1]
    std::function<double(double)> derivative;

    /// Default bump psi(u) = c (1 - u^2)^2, c = sqrt(315/256), so that
    /// int psi^2 = 1 and int psi'^2 = 3 in closed form.
    static Mollifier polynomial_bump();

    double squared_mass() const;       // int psi^2 du, quadrature
    double derivative_energy() const;  // int psi'^2 du, quadrature
};

/// psi_eps(u) = psi(u/eps) / sqrt(eps); support radius eps.
struct ScaledMollifier {
    Mollifier psi;
    double eps = 1.0;

    double value(double u) const;
    double derivative(double u) const;
    double radius() const { return eps; }
};

/// Stationary covariance kernel Gamma: even, Gamma(0)=1 (except the
/// indicator limit), |Gamma| <= 1, positive semidefinite.
/// Evaluation is symmetric by construction (everything goes through |x|).
class Kernel {
public:
    enum class Family { Gaussian, Mollified, Indicator, Table };

    static Kernel gaussian();
    static Kernel indicator();
    /// Autocorrelation Gamma_eps(u) = int psi_eps(p) psi_eps(u+p) dp,
    /// normalized so Gamma_eps(0) = 1 exactly; support radius 2*eps.
    static Kernel mollified(Mollifier psi, double eps);
    /// Piecewise-linear table on xs >= 0 (xs[0] must be 0); zero beyond the
    /// last abscissa; evaluated at |x|.  Used for config-supplied kernels
    /// and deliberately broken fixtures.
    static Kernel table(std::vector<double> xs, std::vector<double> values);

    double operator()(double x) const;
    /// 1 - Gamma(x) without cancellation where a stable form exists.
    double one_minus(double x) const;

    Family family() const;
    std::string id() const;
    /// Radius beyond which Gamma vanishes; +inf for the Gaussian family.
    double support_radius() const;
    double lipschitz_constant() const;

    bool is_mollified() const { return family() == Family::Mollified; }
    const ScaledMollifier& generator() const;  // Mollified only
    double epsilon() const;                    // Mollified only

private:
    struct Impl;
    explicit Kernel(std::shared_ptr<const Impl> impl) : impl_(std::move(impl)) {}
    std::shared_ptr<const Impl> impl_;
};

/// The analytic functionals the convergence statements depend on.
struct KernelFunctionals {
    double c_smooth = 0.0;                // smallest C with 1-Gamma(u) <= C u^2
    double c_m = 0.0;                     // sup (2-2*Gamma(x))/x^2, +inf allowed
    std::optional<double> l_squared;      // (1/eps) int psi'^2, mollified only
};

double eval_gamma(const Kernel& kernel, double x);
Kernel mollified_kernel(const Mollifier& psi, double eps);

/// sup over x != 0 of (2 - 2*Gamma(x)) / x^2, combining a dense grid with the
/// curvature limit -Gamma''(0) where available.  +inf for the indicator.
double compute_cm(const Kernel& kernel);

/// L^2_eps = (1/eps) int psi'(p)^2 dp.
double compute_l2(const Mollifier& psi, double eps);

/// Smoothness schedule eps_n = (log log max(n, 27))^(-1/4); nonincreasing,
/// 1/eps_n^2 = sqrt(log log n) = o(log log n).
double epsilon_schedule(long long n);

/// True iff the Gram matrix [Gamma(p_i - p_j)] has min eigenvalue
/// >= -1e-10 * dimension.
bool check_positive_definite(const Kernel& kernel, const std::vector<double>& points);

KernelFunctionals compute_functionals(const Kernel& kernel);

/// Kernel from a config-file id: "gaussian", "indicator",
/// "mollified" (uses the polynomial bump with the given eps).
Kernel kernel_from_id(const std::string& id, double eps);

} // namespace coalflow
