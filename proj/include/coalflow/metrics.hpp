#pragma once

#include "coalflow/errors.hpp"
#include "coalflow/flow_engine.hpp"

#include <functional>
#include <vector>

namespace coalflow {

/// Nondecreasing function on [0,1], constant extension outside; either
/// piecewise-linear (continuous) or right-continuous step, flagged explicitly.
class MonotonePath {
public:
    enum class Interp { Linear, Step };

    MonotonePath(std::vector<double> breakpoints, std::vector<double> values, Interp interp);

    double operator()(double u) const;
    double left_limit(double u) const;  // lim_{v -> u-}; equals the value when Linear

    const std::vector<double>& breakpoints() const { return bp_; }
    const std::vector<double>& values() const { return val_; }
    Interp interp() const { return interp_; }

private:
    std::vector<double> bp_, val_;
    Interp interp_;
};

/// Levy-Prokhorov distance for monotone paths:
/// inf{eps > 0 : for all u in [0,1],
///   f(u-eps)-eps <= g(u) <= f(u+eps)+eps and g(u-eps)-eps <= f(u) <= g(u+eps)+eps},
/// each inequality binding only while its shifted argument stays in [0,1]
/// (so a vertical shift by c costs c/2), by bisection to absolute tolerance
/// 1e-9; the envelope conditions are checked on the union of breakpoints and
/// breakpoints +- eps (with left limits), which is exhaustive for
/// piecewise-linear/step monotone pairs.
double levy_prokhorov(const MonotonePath& f, const MonotonePath& g);

/// max |f - g|, exact for pairs sharing the interpretation flag.
double sup_norm(const MonotonePath& f, const MonotonePath& g);

/// Realized covariation sum_k (a[k+1]-a[k]) * (b[k+1]-b[k]).
double quadratic_covariation(const std::vector<double>& a, const std::vector<double>& b);

/// Sup distance between the empirical cdf of samples and a reference cdf.
double ks_statistic(const std::vector<double>& samples, const std::function<double(double)>& cdf);

/// Sup distance between two empirical cdfs.
double ks_two_sample(std::vector<double> a, std::vector<double> b);

struct RateFit {
    std::vector<double> log_n, log_error;
    double slope = 0.0, intercept = 0.0, residual_norm = 0.0;
};

/// Least-squares line through (log n, log error); needs >= 3 points.
RateFit rate_fit(const std::vector<long long>& ns, const std::vector<double>& errors);

/// Fraction of replicas whose minimum ordered gap over all recorded steps
/// is below -r.
double order_violation_probability(const std::vector<FlowPath>& paths, double r);

double normal_cdf(double x);

/// Sorted copy — the monotone rearrangement of sampled values.
std::vector<double> monotone_rearranged(std::vector<double> values);

/// Asymptotic Kolmogorov quantile threshold c(alpha)/sqrt(n) (one-sample) or
/// c(alpha)*sqrt((n+m)/(n*m)) (two-sample) times a safety factor.
double ks_threshold(size_t n, double safety = 1.3);
double ks_threshold_two_sample(size_t n, size_t m, double safety = 1.3);

} // namespace coalflow
