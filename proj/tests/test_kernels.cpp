#include "doctest.h"
#include "oracles.hpp"

#include "coalflow/kernels.hpp"
#include "coalflow/rng.hpp"

#include <cmath>
#include <limits>

using namespace coalflow;

TEST_CASE("polynomial bump: unit squared mass, derivative energy 3") {
    auto psi = Mollifier::polynomial_bump();
    CHECK(psi.value(0.0) == doctest::Approx(1.1092649593311780).epsilon(1e-14));
    CHECK(psi.value(1.0) == 0.0);
    CHECK(psi.value(-1.2) == 0.0);
    CHECK(psi.derivative(0.0) == 0.0);
    // closed forms: int psi^2 = 1, int psi'^2 = 3
    CHECK(psi.squared_mass() == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(psi.derivative_energy() == doctest::Approx(3.0).epsilon(1e-9));
    // derivative field consistent with value field
    CHECK(oracles::derivative_energy_fd(psi.value) == doctest::Approx(3.0).epsilon(1e-4));
}

TEST_CASE("scaled mollifier: psi_eps(u) = psi(u/eps)/sqrt(eps)") {
    ScaledMollifier s{Mollifier::polynomial_bump(), 0.25};
    auto psi = Mollifier::polynomial_bump();
    CHECK(s.value(0.1) == doctest::Approx(psi.value(0.4) / std::sqrt(0.25)).epsilon(1e-14));
    CHECK(s.derivative(0.1) ==
          doctest::Approx(psi.derivative(0.4) / (0.25 * std::sqrt(0.25))).epsilon(1e-14));
    CHECK(s.value(0.3) == 0.0);  // support radius eps
    CHECK(s.radius() == 0.25);
}

TEST_CASE("gaussian kernel values") {
    auto k = Kernel::gaussian();
    CHECK(k(0.0) == 1.0);
    CHECK(k(1.0) == doctest::Approx(0.6065306597126334).epsilon(1e-14));
    CHECK(k(-1.0) == k(1.0));
    CHECK(k.one_minus(1e-8) == doctest::Approx(5e-17).epsilon(1e-10));
    CHECK(k.one_minus(1e-8) > 0.0);
    CHECK(k.support_radius() == std::numeric_limits<double>::infinity());
    CHECK(k.lipschitz_constant() == doctest::Approx(0.6065306597126334).epsilon(1e-14));
}

TEST_CASE("mollified kernel matches frozen convolution values") {
    auto k = mollified_kernel(Mollifier::polynomial_bump(), 0.5);
    CHECK(k(0.0) == 1.0);
    CHECK(k(0.25) == doctest::Approx(0.686885833740234375).epsilon(1e-8));
    CHECK(k(0.5) == doctest::Approx(0.201171875).epsilon(1e-8));
    CHECK(k(1.0) == 0.0);  // support radius 2*eps
    CHECK(k(-0.25) == k(0.25));

    auto k1 = mollified_kernel(Mollifier::polynomial_bump(), 1.0);
    CHECK(k1(0.25) == doctest::Approx(0.9107389375567436).epsilon(1e-8));
}

TEST_CASE("mollified kernel tracks the direct-quadrature oracle") {
    auto psi = Mollifier::polynomial_bump();
    for (double eps : {0.2, 0.7, 1.3}) {
        auto k = mollified_kernel(psi, eps);
        for (double u : {0.0, 0.05, 0.13, 0.31, 0.77, 1.11, 1.9}) {
            const double x = u * eps;
            CHECK(k(x) == doctest::Approx(oracles::gamma_eps(psi.value, eps, x)).epsilon(1e-6));
        }
    }
}

TEST_CASE("kernel symmetry, bounds, and decay properties") {
    RngStream rng(42);
    auto gauss = Kernel::gaussian();
    auto moll = mollified_kernel(Mollifier::polynomial_bump(), 0.8);
    for (int i = 0; i < 500; ++i) {
        const double x = 6.0 * (rng.uniform01() - 0.5);
        for (const auto& k : {gauss, moll}) {
            CHECK(k(x) == k(-x));  // exact: evaluation goes through |x|
            CHECK(k(x) <= 1.0);
            CHECK(k(x) >= -1.0);
            CHECK(k.one_minus(x) == doctest::Approx(1.0 - k(x)).epsilon(1e-12));
        }
        CHECK(std::abs(moll(x) - moll(x + 1e-4)) <= moll.lipschitz_constant() * 1e-4 * (1.0 + 1e-3) + 1e-12);
    }
    CHECK(moll(1.6) == 0.0);
    CHECK(moll(1.5999) != 0.0);
}

TEST_CASE("indicator kernel is the degenerate limit") {
    auto k = Kernel::indicator();
    CHECK(k(0.0) == 1.0);
    CHECK(k(1e-300) == 0.0);
    CHECK(k(-2.0) == 0.0);
    CHECK(k.support_radius() == 0.0);
    CHECK(compute_cm(k) == std::numeric_limits<double>::infinity());
}

TEST_CASE("table kernel: interpolation and validation") {
    auto k = Kernel::table({0.0, 1.0, 2.0}, {1.0, 0.5, 0.0});
    CHECK(k(0.0) == 1.0);
    CHECK(k(0.5) == doctest::Approx(0.75));
    CHECK(k(-0.5) == k(0.5));
    CHECK(k(1.5) == doctest::Approx(0.25));
    CHECK(k(2.0) == 0.0);
    CHECK(k(5.0) == 0.0);
    CHECK(k.support_radius() == 2.0);

    CHECK_THROWS_AS(Kernel::table({0.0}, {1.0}), std::invalid_argument);
    CHECK_THROWS_AS(Kernel::table({0.0, 1.0}, {1.0}), std::invalid_argument);
    CHECK_THROWS_AS(Kernel::table({0.5, 1.0}, {1.0, 0.0}), std::invalid_argument);
    CHECK_THROWS_AS(Kernel::table({0.0, 2.0, 1.0}, {1.0, 0.5, 0.8}), std::invalid_argument);
}

TEST_CASE("quadratic-bound constant: gaussian") {
    // 2(1 - e^{-x^2/2})/x^2 is maximized in the x -> 0 limit, value 1
    auto f = compute_functionals(Kernel::gaussian());
    CHECK(f.c_m == doctest::Approx(1.0).epsilon(1e-3));
    CHECK(f.c_smooth == doctest::Approx(0.5 * f.c_m).epsilon(1e-14));
    CHECK(!f.l_squared.has_value());
}

TEST_CASE("quadratic-bound constant: mollified scales as 1/eps^2") {
    auto psi = Mollifier::polynomial_bump();
    auto f1 = compute_functionals(mollified_kernel(psi, 1.0));
    CHECK(f1.c_m == doctest::Approx(3.0).epsilon(1e-6));
    REQUIRE(f1.l_squared.has_value());
    CHECK(*f1.l_squared == doctest::Approx(3.0).epsilon(1e-9));

    auto f2 = compute_functionals(mollified_kernel(psi, 0.5));
    CHECK(f2.c_m == doctest::Approx(12.0).epsilon(1e-6));
    CHECK(*f2.l_squared == doctest::Approx(6.0).epsilon(1e-9));
}

TEST_CASE("derivative-energy functional scales as 1/eps") {
    auto psi = Mollifier::polynomial_bump();
    CHECK(compute_l2(psi, 1.0) == doctest::Approx(3.0).epsilon(1e-9));
    CHECK(compute_l2(psi, 0.1) == doctest::Approx(30.0).epsilon(1e-9));
    CHECK_THROWS_AS(compute_l2(psi, 0.0), std::invalid_argument);
}

TEST_CASE("smoothing schedule: frozen values and monotonicity") {
    CHECK(epsilon_schedule(1) == epsilon_schedule(27));  // clamped below 27
    CHECK(epsilon_schedule(27) == doctest::Approx(0.9569094113011791).epsilon(1e-12));
    CHECK(epsilon_schedule(1000) == doctest::Approx(0.8481291558745198).epsilon(1e-12));
    CHECK(epsilon_schedule(4096) == doctest::Approx(0.8288927278721427).epsilon(1e-12));
    CHECK(epsilon_schedule(1000000) == doctest::Approx(0.7855700604737751).epsilon(1e-12));
    double prev = epsilon_schedule(1);
    for (long long n = 2; n <= 20000; n = n * 5 / 4 + 1) {
        const double e = epsilon_schedule(n);
        CHECK(e <= prev);
        CHECK(e > 0.0);
        prev = e;
    }
    CHECK_THROWS_AS(epsilon_schedule(0), std::invalid_argument);
}

TEST_CASE("positive definiteness check") {
    auto gauss = Kernel::gaussian();
    CHECK(check_positive_definite(gauss, {}));
    CHECK(check_positive_definite(gauss, {0.3}));
    CHECK(check_positive_definite(gauss, {0.0, 0.5, 1.0, 3.7, -2.2}));

    auto moll = mollified_kernel(Mollifier::polynomial_bump(), 0.3);
    std::vector<double> grid;
    for (int i = 0; i < 24; ++i) grid.push_back(-1.0 + i / 12.0);
    CHECK(check_positive_definite(moll, grid));

    // a step down to -1 is not a valid covariance; the 3x3 Gram at
    // {0, 1.6, 3.2} is tridiagonal with off-diagonal -1, min eig 1 - sqrt(2)
    auto bad = Kernel::table({0.0, 1.4, 1.5, 2.0}, {1.0, 1.0, -1.0, -1.0});
    std::vector<double> pts = {0.0, 1.6, 3.2};
    CHECK(!check_positive_definite(bad, pts));
    std::array<std::array<double, 3>, 3> gram{};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) gram[i][j] = bad(pts[i] - pts[j]);
    CHECK(oracles::min_eig_3x3(gram) == doctest::Approx(1.0 - std::sqrt(2.0)).epsilon(1e-9));
}

TEST_CASE("kernel ids round-trip") {
    CHECK(kernel_from_id("gaussian", 0.0).id() == "gaussian");
    CHECK(kernel_from_id("indicator", 0.0).id() == "indicator");
    auto m = kernel_from_id("mollified", 0.4);
    CHECK(m.id() == "mollified");
    CHECK(m.epsilon() == 0.4);
    CHECK_THROWS_AS(kernel_from_id("brownian", 0.0), std::invalid_argument);
    CHECK_THROWS_AS(kernel_from_id("mollified", -1.0), std::invalid_argument);
    CHECK_THROWS_AS(Kernel::gaussian().generator(), std::logic_error);
}
