#include "doctest.h"

#include "coalflow/flow_engine.hpp"
#include "coalflow/metrics.hpp"
#include "coalflow/rng.hpp"

#include <cmath>
#include <sstream>
#include <vector>

using namespace coalflow;
using doctest::Approx;

namespace {

FlowConfig direct_config(std::vector<double> starts, long long n) {
    FlowConfig c;
    c.scheme = Scheme::DirectGP;
    c.kernel = Kernel::gaussian();
    c.n_steps = n;
    c.starts = std::move(starts);
    return c;
}

FlowConfig white_config(std::vector<double> starts, long long n, double eps) {
    FlowConfig c;
    c.scheme = Scheme::WhiteNoise;
    c.kernel = Kernel::mollified(Mollifier::polynomial_bump(), eps);
    c.n_steps = n;
    c.starts = std::move(starts);
    return c;
}

double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / (double)v.size();
}

double var_of(const std::vector<double>& v) {
    const double m = mean_of(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return s / ((double)v.size() - 1.0);
}

} // namespace

TEST_CASE("flow config validation") {
    CHECK_THROWS_AS(run_flow(direct_config({}, 10), RngStream(1)), ConfigInvalid);
    CHECK_THROWS_AS(run_flow(direct_config({1.0, 0.0}, 10), RngStream(1)), ConfigInvalid);
    CHECK_THROWS_AS(run_flow(direct_config({std::nan("")}, 10), RngStream(1)), ConfigInvalid);
    CHECK_THROWS_AS(run_flow(direct_config({0.0}, -1), RngStream(1)), ConfigInvalid);

    FlowConfig bad = direct_config({0.0}, 10);
    bad.scheme = Scheme::WhiteNoise;  // gaussian kernel has no generating bump
    CHECK_THROWS_AS(run_flow(bad, RngStream(1)), ConfigInvalid);

    FlowConfig margin = white_config({0.0}, 10, 0.5);
    margin.window_margin = 0.0;
    CHECK_THROWS_AS(run_flow(margin, RngStream(1)), ConfigInvalid);
    FlowConfig refine = white_config({0.0}, 10, 0.5);
    refine.grid_refinement = 0;
    CHECK_THROWS_AS(run_flow(refine, RngStream(1)), ConfigInvalid);

    // zero steps: the recorded path is just the starts
    FlowPath p0 = run_flow(direct_config({-1.0, 2.0}, 0), RngStream(1));
    CHECK(p0.positions == std::vector<std::vector<double>>{{-1.0, 2.0}});
    CHECK(p0.steps() == 0);
    FlowPath w0 = run_flow(white_config({0.5}, 0, 0.5), RngStream(1));
    CHECK(w0.positions == std::vector<std::vector<double>>{{0.5}});
}

TEST_CASE("step_direct: joint draw semantics") {
    const Kernel kern = Kernel::gaussian();
    RngStream bad_rng(1);
    CHECK_THROWS_AS(step_direct({0.0}, kern, 0, bad_rng), ConfigInvalid);

    RngStream rng(17);
    // coincident particles receive the identical increment
    for (int i = 0; i < 50; ++i) {
        auto next = step_direct({0.4, 0.4, 1.0}, kern, 7, rng);
        CHECK(next[0] == next[1]);
    }

    // single particle, m = 1: increment is standard normal
    RngStream rng2(18);
    std::vector<double> incs;
    for (int i = 0; i < 100000; ++i) incs.push_back(step_direct({0.0}, kern, 1, rng2)[0]);
    CHECK(ks_statistic(incs, [](double x) { return normal_cdf(x); }) < 0.01);

    // two particles at gap d: increment difference has variance (2-2*Gamma(d))/m
    RngStream rng3(19);
    const double d = 0.7;
    const long long m = 4;
    std::vector<double> diffs;
    for (int i = 0; i < 100000; ++i) {
        auto next = step_direct({0.0, d}, kern, m, rng3);
        diffs.push_back((next[1] - d) - next[0]);
    }
    const double expected = 2.0 * kern.one_minus(d) / (double)m;
    CHECK(std::abs(mean_of(diffs)) < 0.01);
    CHECK(var_of(diffs) == Approx(expected).epsilon(0.05));
}

TEST_CASE("step_white_noise: shared slab, coincidence, window errors") {
    const Kernel kern = Kernel::mollified(Mollifier::polynomial_bump(), 0.5);
    const ScaledMollifier& psi = kern.generator();
    RngStream rng(7);
    const GridSpec grid = make_grid(-2.0, 2.0, 0.025);
    const NoiseSlab slab = make_slab(grid, 0.125, rng);

    auto next = step_white_noise(std::vector<double>{0.1, 0.1, 0.3}, psi, slab);
    CHECK(next[0] == next[1]);  // identical integral, bitwise
    CHECK(next[0] != next[2]);

    // particle whose bump support pokes outside the window
    CHECK_THROWS_AS(step_white_noise(std::vector<double>{1.8}, psi, slab), WindowTooSmall);
}

TEST_CASE("run_flow is deterministic in (config, seed) and records rng identity") {
    FlowConfig c = direct_config({0.0, 0.5}, 40);
    FlowPath a = run_flow(c, RngStream(5, 2));
    FlowPath b = run_flow(c, RngStream(5, 2));
    CHECK(a.positions == b.positions);
    CHECK(a.seed == 5);
    CHECK(a.stream_id == 2);
    CHECK(a.positions[0] == c.starts);
    CHECK(a.steps() == 40);
    FlowPath other = run_flow(c, RngStream(5, 3));
    CHECK(a.positions != other.positions);

    FlowConfig w = white_config({0.0}, 30, 0.5);
    CHECK(run_flow(w, RngStream(9)).positions == run_flow(w, RngStream(9)).positions);
}

TEST_CASE("white-noise window: doubled-margin retry reproduces the same trajectory") {
    FlowConfig narrow = white_config({0.0}, 300, 0.5);
    narrow.window_margin = 3.0;
    FlowConfig wide = narrow;
    wide.window_margin = 8.0;
    // absolute-cell noise keying makes the window size irrelevant to values
    CHECK(run_flow(narrow, RngStream(11)).positions == run_flow(wide, RngStream(11)).positions);

    FlowConfig hopeless = white_config({0.0}, 400, 0.5);
    hopeless.window_margin = 0.05;  // escapes even after one doubling
    CHECK_THROWS_AS(run_flow(hopeless, RngStream(12)), WindowTooSmall);
}

TEST_CASE("run_flow_on_slabs replays caller noise without retry") {
    FlowConfig c = white_config({0.0, 0.2}, 16, 0.5);
    RngStream rng(23);
    const GridSpec grid = make_grid(-6.0, 6.0, 0.5 / (double)c.grid_refinement);
    const auto slabs = make_slabs(grid, 16, 1.0 / 16.0, rng);

    FlowPath p = run_flow_on_slabs(c, slabs);
    CHECK(p.steps() == 16);
    CHECK(p.positions[0] == c.starts);
    // manual replay with the public single-step operation matches
    const ScaledMollifier& psi = c.kernel.generator();
    std::vector<double> x = c.starts;
    for (int k = 0; k < 16; ++k) {
        x = step_white_noise(x, psi, slabs[k]);
        CHECK(p.positions[k + 1] == x);
    }

    FlowConfig wrong = c;
    wrong.n_steps = 8;
    CHECK_THROWS_AS(run_flow_on_slabs(wrong, slabs), GridMismatch);
    FlowConfig direct = direct_config({0.0}, 16);
    CHECK_THROWS_AS(run_flow_on_slabs(direct, slabs), ConfigInvalid);

    // a tiny window propagates the coverage error (no retry possible)
    const GridSpec tiny = make_grid(-0.6, 0.6, 0.025);
    RngStream rng2(24);
    const auto tiny_slabs = make_slabs(tiny, 16, 1.0 / 16.0, rng2);
    CHECK_THROWS_AS(run_flow_on_slabs(c, tiny_slabs), WindowTooSmall);
}

TEST_CASE("interpolate: grid points, midpoints, clamping") {
    FlowPath p;
    p.positions = {{0.0}, {1.0}, {-2.0}, {4.0}, {4.0}, {6.0}, {0.0}, {1.0}, {3.0}};  // n = 8
    CHECK(interpolate(p, 0, 3.0 / 8.0) == 4.0);
    CHECK(interpolate(p, 0, 0.0) == 0.0);
    CHECK(interpolate(p, 0, 1.0) == 3.0);
    CHECK(interpolate(p, 0, 3.0 / 16.0) == Approx(-0.5));  // mean of steps 1 and 2
    CHECK(interpolate(p, 0, -0.7) == 0.0);
    CHECK(interpolate(p, 0, 1.7) == 3.0);
    CHECK_THROWS_AS(interpolate(p, 1, 0.5), ConfigInvalid);

    FlowPath flat;
    flat.positions = {{2.5}};
    CHECK(interpolate(flat, 0, 0.9) == 2.5);

    // non-dyadic step counts stay within rounding of the exact node value
    FlowPath q;
    q.positions = {{0.0}, {3.0}, {9.0}};
    CHECK(interpolate(q, 0, 0.5) == Approx(3.0).epsilon(1e-12));
}

TEST_CASE("lemma1_one_point: drift-free unit-variance chain") {
    RngStream bad_rng(1);
    CHECK_THROWS_AS(lemma1_one_point(0.0, 0, bad_rng), ConfigInvalid);

    RngStream rng(31);
    const double u = 1.7;
    {
        auto y = lemma1_one_point(u, 16, rng);
        CHECK(y.size() == 17);
        CHECK(y[0] == u);
    }
    std::vector<double> terminals;
    for (int i = 0; i < 100000; ++i) terminals.push_back(lemma1_one_point(u, 16, rng).back());
    CHECK(std::abs(mean_of(terminals) - u) < 0.02);
    CHECK(var_of(terminals) == Approx(1.0).epsilon(0.03));

    // explicit unit scale: terminal variance is n
    RngStream rng2(32);
    std::vector<double> unit;
    for (int i = 0; i < 20000; ++i) unit.push_back(lemma1_one_point(0.0, 4, rng2, 1.0).back());
    CHECK(var_of(unit) == Approx(4.0).epsilon(0.05));
}

TEST_CASE("lemma1_two_point: absorption, indicator variance, validation") {
    const Kernel gauss = Kernel::gaussian();
    RngStream bad_rng(1);
    CHECK_THROWS_AS(lemma1_two_point(-0.1, gauss, 10, bad_rng), ConfigInvalid);

    RngStream rng(41);
    auto zero = lemma1_two_point(0.0, gauss, 200, rng);
    for (double z : zero) CHECK(z == 0.0);

    // indicator kernel: increments are sqrt(2/n) * standard normal while z != 0
    RngStream rng2(42);
    const long long n = 1000;
    std::vector<double> incs;
    for (int rep = 0; rep < 200; ++rep) {
        auto z = lemma1_two_point(5.0, Kernel::indicator(), n, rng2);
        for (size_t k = 0; k + 1 < z.size(); ++k)
            if (z[k] != 0.0) incs.push_back(z[k + 1] - z[k]);
    }
    CHECK(var_of(incs) == Approx(2.0 / (double)n).epsilon(0.03));
}

TEST_CASE("gap chain satisfies the two-point generator identity") {
    // f(x) = x^2: E[ f(z_n) - f(z_0) - sum_k (2 - 2*Gamma(z_k))/n ] = 0
    const Kernel kern = Kernel::gaussian();
    const long long n = 200;
    const double d0 = 0.5;
    RngStream rng(51);
    std::vector<double> stats;
    for (int rep = 0; rep < 10000; ++rep) {
        auto z = lemma1_two_point(d0, kern, n, rng);
        double compensator = 0.0;
        for (long long k = 0; k < n; ++k) compensator += 2.0 * kern.one_minus(z[k]) / (double)n;
        stats.push_back(z.back() * z.back() - d0 * d0 - compensator);
    }
    const double se = std::sqrt(var_of(stats) / (double)stats.size());
    CHECK(std::abs(mean_of(stats)) < 4.0 * se);
}

TEST_CASE("one-point marginal is standard normal around the start") {
    // chain oracle vs the full flow, and the flow against the closed form
    const double u = 0.3;
    RngStream rng(61);
    std::vector<double> flow_terminals, chain_terminals;
    FlowConfig c = direct_config({u}, 2000);
    for (int rep = 0; rep < 5000; ++rep)
        flow_terminals.push_back(run_flow(c, rng.derive(rep)).positions.back()[0]);
    RngStream rng2(62);
    for (int rep = 0; rep < 10000; ++rep)
        chain_terminals.push_back(lemma1_one_point(u, 50, rng2).back());

    CHECK(ks_statistic(flow_terminals, [&](double x) { return normal_cdf(x - u); }) < 0.025);
    CHECK(ks_statistic(chain_terminals, [&](double x) { return normal_cdf(x - u); }) < 0.02);

    RngStream rng3(63);
    std::vector<double> flow_small;
    FlowConfig c2 = direct_config({u}, 50);
    for (int rep = 0; rep < 10000; ++rep)
        flow_small.push_back(run_flow(c2, rng3.derive(rep)).positions.back()[0]);
    CHECK(ks_two_sample(flow_small, chain_terminals) < 0.02);
}

TEST_CASE("tracking a second particle leaves the one-point law unchanged") {
    const long long n = 60;
    RngStream rng(71);
    std::vector<double> alone, paired;
    FlowConfig c1 = direct_config({0.0}, n);
    FlowConfig c2 = direct_config({0.0, 0.4}, n);
    for (int rep = 0; rep < 10000; ++rep) {
        alone.push_back(run_flow(c1, rng.derive(2 * rep)).positions.back()[0]);
        paired.push_back(run_flow(c2, rng.derive(2 * rep + 1)).positions.back()[0]);
    }
    CHECK(ks_two_sample(alone, paired) < 0.02);
}

TEST_CASE("terminal gap of the two-particle flow matches the gap chain in law") {
    const Kernel kern = Kernel::gaussian();
    const long long n = 500;
    for (double d0 : {0.1, 1.0}) {
        RngStream rng(81 + (int)(10 * d0));
        std::vector<double> flow_gaps, chain_gaps;
        FlowConfig c = direct_config({0.0, d0}, n);
        for (int rep = 0; rep < 5000; ++rep) {
            const std::vector<double> last = run_flow(c, rng.derive(rep)).positions.back();
            flow_gaps.push_back(last[1] - last[0]);
        }
        RngStream rng2(91 + (int)(10 * d0));
        for (int rep = 0; rep < 5000; ++rep)
            chain_gaps.push_back(lemma1_two_point(d0, kern, n, rng2).back());
        CHECK(ks_two_sample(flow_gaps, chain_gaps) < 0.03);
    }
}

TEST_CASE("second moment of interpolated gaps stays within the exponential bound") {
    // 1 - Gamma(x) <= x^2/2, so terminal squared gaps are bounded by
    // e^{2C} (u-v)^2 with C = 1/2, up to Monte Carlo slack 1.1
    const std::vector<double> grid{0.0, 0.25, 0.5, 0.75, 1.0};
    for (long long m : {50LL, 200LL}) {
        FlowConfig c = direct_config(grid, m);
        RngStream rng(101 + (int)m);
        std::vector<std::vector<double>> sq(grid.size(), std::vector<double>(grid.size(), 0.0));
        const int reps = 10000;
        for (int rep = 0; rep < reps; ++rep) {
            const std::vector<double> last = run_flow(c, rng.derive(rep)).positions.back();
            for (size_t a = 0; a < grid.size(); ++a)
                for (size_t b = a + 1; b < grid.size(); ++b)
                    sq[a][b] += (last[b] - last[a]) * (last[b] - last[a]);
        }
        for (size_t a = 0; a < grid.size(); ++a)
            for (size_t b = a + 1; b < grid.size(); ++b) {
                const double gap = grid[b] - grid[a];
                CHECK(sq[a][b] / reps <= std::exp(1.0) * gap * gap * 1.1);
            }
    }
}

TEST_CASE("white-noise one-point terminal law is standard normal around the start") {
    const double u = 3.0;
    FlowConfig c = white_config({u}, 256, 0.5);
    RngStream rng(111);
    std::vector<double> terminals;
    for (int rep = 0; rep < 10000; ++rep)
        terminals.push_back(run_flow(c, rng.derive(rep)).positions.back()[0]);
    CHECK(ks_statistic(terminals, [&](double x) { return normal_cdf(x - u); }) < 0.02);
}

TEST_CASE("coalescence is absorbing for coincident starts") {
    FlowPath direct = run_flow(direct_config({0.3, 0.3}, 80), RngStream(121));
    for (const auto& row : direct.positions) CHECK(row[0] == row[1]);

    FlowPath white = run_flow(white_config({-0.2, -0.2}, 80, 0.5), RngStream(122));
    for (const auto& row : white.positions) CHECK(row[0] == row[1]);
}

TEST_CASE("derivative recursion: validation, initial values, determinism") {
    FlowConfig c = white_config({0.0, 0.6}, 8, 1.0);
    RngStream rng(131);
    const GridSpec grid = make_grid(-7.0, 7.0, 1.0 / (double)c.grid_refinement);
    const auto fine = make_slabs(grid, 16, 1.0 / 16.0, rng);

    CHECK_THROWS_AS(derivative_path(c, fine, 3), GridMismatch);
    CHECK_THROWS_AS(derivative_path(c, fine, 0), ConfigInvalid);
    FlowConfig d = direct_config({0.0}, 8);
    CHECK_THROWS_AS(derivative_path(d, fine, 2), ConfigInvalid);

    DerivativePath dp = derivative_path(c, fine, 2);
    CHECK(dp.l_squared == Approx(3.0 / (1.0 * 1.0)).epsilon(1e-9));
    CHECK(dp.z[0] == c.starts);
    CHECK(dp.y[0] == std::vector<double>{1.0, 1.0});
    CHECK(dp.eta[0] == std::vector<double>{0.0, 0.0});
    CHECK(dp.coarse_times.front() == 0.0);
    CHECK(dp.coarse_times.back() == 1.0);
    CHECK(dp.fine_times.size() == 17);
    for (const auto& row : dp.y_reference)
        for (double v : row) CHECK(v > 0.0);

    DerivativePath again = derivative_path(c, fine, 2);
    CHECK(dp.y == again.y);
    CHECK(dp.eta == again.eta);
}

TEST_CASE("derivative recursion tracks the exponential reference moments") {
    const double eps = 3.0;
    FlowConfig c = white_config({0.0}, 100, eps);
    const double l2 = 3.0 / (eps * eps);
    const long long factor = 2, fine_n = 200;
    const GridSpec grid = make_grid(-6.0 - eps, 6.0 + eps, eps / (double)c.grid_refinement);

    double sum_y2 = 0.0, sum_yn = 0.0, sum_qv = 0.0, recorded_l2 = 0.0;
    const int reps = 5000, qv_reps = 200;
    for (int rep = 0; rep < reps; ++rep) {
        RngStream rng(141, (std::uint64_t)rep);
        const auto fine = make_slabs(grid, fine_n, 1.0 / (double)fine_n, rng);
        DerivativePath dp = derivative_path(c, fine, factor);
        recorded_l2 = dp.l_squared;
        const double yref = dp.y_reference.back()[0];
        sum_y2 += yref * yref;
        sum_yn += dp.y.back()[0];
        if (rep < qv_reps) {
            std::vector<double> eta_path(dp.eta.size());
            for (size_t k = 0; k < dp.eta.size(); ++k) eta_path[k] = dp.eta[k][0];
            sum_qv += quadratic_covariation(eta_path, eta_path);
        }
    }
    CHECK(recorded_l2 == Approx(l2).epsilon(1e-9));
    CHECK(sum_y2 / reps == Approx(std::exp(l2)).epsilon(0.10));
    CHECK(sum_yn / reps == Approx(1.0).epsilon(0.05));
    CHECK(sum_qv / qv_reps == Approx(l2).epsilon(0.05));
}

TEST_CASE("analyze_coalescence: merge steps, violations, extremes") {
    FlowPath p;
    // three particles: pair (0,1) merges at step 2 and stays; pair (1,2)
    // crosses at step 1 and separates again
    p.positions = {
        {0.0, 1.0, 2.0},
        {0.2, 0.8, 0.7},
        {0.5, 0.5, 1.5},
        {0.6, 0.6, 2.0},
    };
    CoalescenceReport rep = analyze_coalescence(p, 1e-9);
    REQUIRE(rep.pair_merge_steps.size() == 2);
    CHECK(rep.pair_merge_steps[0] == 2);
    CHECK(!rep.pair_merge_steps[1].has_value());
    CHECK(rep.order_violations == 1);
    CHECK(rep.min_gap == Approx(-0.1));
    CHECK(rep.merged_pairs() == 1);
    CHECK(rep.terminal_clusters() == 2);
    CHECK(rep.merge_tol == 1e-9);

    // gap dips under tolerance then leaves: not a merge
    FlowPath q;
    q.positions = {{0.0, 1.0}, {0.5, 0.5}, {0.0, 1.0}};
    CHECK(!analyze_coalescence(q, 1e-9).pair_merge_steps[0].has_value());
    CHECK(analyze_coalescence(q, 2.0).pair_merge_steps[0] == 0);  // everything within 2.0

    // all-equal path merges at step 0
    FlowPath r;
    r.positions = {{1.0, 1.0}, {2.0, 2.0}};
    CHECK(analyze_coalescence(r, 1e-9).pair_merge_steps[0] == 0);
    CHECK(analyze_coalescence(r, 1e-9).terminal_clusters() == 1);

    // strictly ordered deterministic path: no merges, no violations
    FlowPath s;
    s.positions = {{0.0, 1.0}, {0.1, 1.0}};
    CoalescenceReport srep = analyze_coalescence(s, 1e-9);
    CHECK(srep.merged_pairs() == 0);
    CHECK(srep.order_violations == 0);
    CHECK(srep.min_gap == Approx(0.9));

    // single particle: nothing to merge
    FlowPath one;
    one.positions = {{0.0}, {0.4}};
    CHECK(analyze_coalescence(one, 1e-9).pair_merge_steps.empty());
    CHECK(analyze_coalescence(one, 1e-9).terminal_clusters() == 1);

    CHECK_THROWS_AS(analyze_coalescence(one, 0.0), ConfigInvalid);
    CHECK_THROWS_AS(analyze_coalescence(FlowPath{}, 1e-9), DegenerateInput);
}

TEST_CASE("flow paths serialize to deterministic csv") {
    FlowPath p;
    p.positions = {{0.0, 1.0}, {0.5, 1.5}};
    std::ostringstream out;
    write_flow_csv(out, p, 7);
    CHECK(out.str() ==
          "replica,start_index,step,time,position\n"
          "7,0,0,0,0\n"
          "7,0,1,1,0.5\n"
          "7,1,0,0,1\n"
          "7,1,1,1,1.5\n");

    std::ostringstream no_header;
    write_flow_csv(no_header, p, 8, false);
    CHECK(no_header.str() ==
          "8,0,0,0,0\n"
          "8,0,1,1,0.5\n"
          "8,1,0,0,1\n"
          "8,1,1,1,1.5\n");

    // 17 significant digits round-trip doubles exactly
    FlowPath fine;
    fine.positions = {{0.1}, {1.0 / 3.0}};
    std::ostringstream f;
    write_flow_csv(f, fine, 0, false);
    CHECK(f.str() ==
          "0,0,0,0,0.10000000000000001\n"
          "0,0,1,1,0.33333333333333331\n");
}
