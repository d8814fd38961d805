#include "coalflow/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace coalflow {

MonotonePath::MonotonePath(std::vector<double> breakpoints, std::vector<double> values,
                           Interp interp)
    : bp_(std::move(breakpoints)), val_(std::move(values)), interp_(interp) {
    if (bp_.size() != val_.size() || bp_.size() < 2)
        throw DegenerateInput("monotone path needs matching breakpoints/values, size >= 2");
    if (bp_.front() != 0.0 || bp_.back() != 1.0)
        throw DegenerateInput("monotone path breakpoints must start at 0 and end at 1");
    for (size_t i = 1; i < bp_.size(); ++i)
        if (!(bp_[i] > bp_[i - 1]))
            throw DegenerateInput("monotone path breakpoints must be strictly increasing");
    for (size_t i = 1; i < val_.size(); ++i)
        if (val_[i] < val_[i - 1])
            throw DegenerateInput("monotone path values must be nondecreasing");
    for (double v : val_)
        if (!std::isfinite(v)) throw DegenerateInput("monotone path values must be finite");
}

double MonotonePath::operator()(double u) const {
    if (u <= 0.0) return val_.front();
    if (u >= 1.0) return val_.back();
    auto it = std::upper_bound(bp_.begin(), bp_.end(), u);
    const size_t i = (size_t)std::distance(bp_.begin(), it) - 1;  // bp_[i] <= u < bp_[i+1]
    if (interp_ == Interp::Step) return val_[i];
    const double t = (u - bp_[i]) / (bp_[i + 1] - bp_[i]);
    return val_[i] + t * (val_[i + 1] - val_[i]);
}

double MonotonePath::left_limit(double u) const {
    if (interp_ == Interp::Linear) return (*this)(u);
    if (u <= 0.0) return val_.front();  // constant extension below 0
    if (u > 1.0) return val_.back();
    auto it = std::lower_bound(bp_.begin(), bp_.end(), u);  // first bp >= u
    const size_t i = (size_t)std::distance(bp_.begin(), it);
    // value on [bp_{i-1}, u): val_[i-1]; at u == bp_0 == 0 the extension applies
    return i == 0 ? val_.front() : val_[i - 1];
}

namespace {

// max |f - g| over the breakpoint union, value and left-limit variants; a
// feasible envelope radius for any monotone pair, whatever the interp flags.
double sup_bound(const MonotonePath& f, const MonotonePath& g) {
    std::vector<double> pts = f.breakpoints();
    pts.insert(pts.end(), g.breakpoints().begin(), g.breakpoints().end());
    std::sort(pts.begin(), pts.end());
    pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
    double best = 0.0;
    for (double u : pts)
        best = std::max({best, std::abs(f(u) - g(u)), std::abs(f.left_limit(u) - g.left_limit(u))});
    return best;
}

std::vector<double> envelope_candidates(const MonotonePath& f, const MonotonePath& g,
                                        double eps) {
    std::vector<double> c;
    c.reserve(3 * (f.breakpoints().size() + g.breakpoints().size()) + 2);
    auto add = [&](double u) { c.push_back(std::clamp(u, 0.0, 1.0)); };
    for (const auto* p : {&f, &g})
        for (double b : p->breakpoints()) {
            add(b);
            add(b - eps);
            add(b + eps);
        }
    add(0.0);
    add(1.0);
    std::sort(c.begin(), c.end());
    c.erase(std::unique(c.begin(), c.end()), c.end());
    return c;
}

// The shifted arguments u -+ eps must stay inside the observation window
// [0,1] for an inequality to bind; otherwise the graphs carry no information
// there and a shift by c correctly costs c/2.  (With the inequalities forced
// outside the window, any fixed vertical offset at an endpoint would cost the
// full offset instead.)
bool envelope_feasible(const MonotonePath& f, const MonotonePath& g, double eps) {
    const double slack = 1e-12;
    auto le = [&](double a, double b) { return a <= b + slack; };
    for (double u : envelope_candidates(f, g, eps)) {
        const bool lower = u - eps >= 0.0, upper = u + eps <= 1.0;
        if (lower && !(le(f(u - eps) - eps, g(u)) && le(g(u - eps) - eps, f(u))))
            return false;
        if (upper && !(le(g(u), f(u + eps) + eps) && le(f(u), g(u + eps) + eps)))
            return false;
        // approach u from below: every evaluation becomes a left limit
        if (lower && !(le(f.left_limit(u - eps) - eps, g.left_limit(u)) &&
                       le(g.left_limit(u - eps) - eps, f.left_limit(u))))
            return false;
        if (upper && !(le(g.left_limit(u), f.left_limit(u + eps) + eps) &&
                       le(f.left_limit(u), g.left_limit(u + eps) + eps)))
            return false;
    }
    return true;
}

} // namespace

double levy_prokhorov(const MonotonePath& f, const MonotonePath& g) {
    if (envelope_feasible(f, g, 0.0)) return 0.0;
    double lo = 0.0, hi = sup_bound(f, g);  // the sup distance always satisfies the envelope
    while (hi - lo > 1e-9) {
        const double mid = 0.5 * (lo + hi);
        (envelope_feasible(f, g, mid) ? hi : lo) = mid;
    }
    return hi;
}

double sup_norm(const MonotonePath& f, const MonotonePath& g) {
    if (f.interp() != g.interp())
        throw DegenerateInput("sup_norm needs a shared interpretation flag");
    return sup_bound(f, g);
}

double quadratic_covariation(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size() || a.size() < 2)
        throw LengthMismatch("quadratic covariation needs equal lengths >= 2");
    double acc = 0.0;
    for (size_t k = 0; k + 1 < a.size(); ++k)
        acc += (a[k + 1] - a[k]) * (b[k + 1] - b[k]);
    return acc;
}

double ks_statistic(const std::vector<double>& samples,
                    const std::function<double(double)>& cdf) {
    if (samples.empty()) throw DegenerateInput("ks_statistic needs samples");
    std::vector<double> s = samples;
    std::sort(s.begin(), s.end());
    const double n = (double)s.size();
    double d = 0.0;
    for (size_t i = 0; i < s.size(); ++i) {
        const double F = cdf(s[i]);
        d = std::max({d, F - (double)i / n, ((double)i + 1.0) / n - F});
    }
    return d;
}

double ks_two_sample(std::vector<double> a, std::vector<double> b) {
    if (a.empty() || b.empty()) throw DegenerateInput("ks_two_sample needs samples");
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    size_t i = 0, j = 0;
    double d = 0.0;
    while (i < a.size() && j < b.size()) {
        const double x = std::min(a[i], b[j]);
        while (i < a.size() && a[i] == x) ++i;
        while (j < b.size() && b[j] == x) ++j;
        d = std::max(d, std::abs((double)i / (double)a.size() - (double)j / (double)b.size()));
    }
    return d;
}

RateFit rate_fit(const std::vector<long long>& ns, const std::vector<double>& errors) {
    if (ns.size() != errors.size() || ns.size() < 3)
        throw DegenerateInput("rate_fit needs >= 3 matched points");
    RateFit fit;
    for (size_t i = 0; i < ns.size(); ++i) {
        if (ns[i] <= 0 || !(errors[i] > 0.0))
            throw DegenerateInput("rate_fit needs positive n and errors");
        fit.log_n.push_back(std::log((double)ns[i]));
        fit.log_error.push_back(std::log(errors[i]));
    }
    const double n = (double)ns.size();
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (size_t i = 0; i < ns.size(); ++i) {
        sx += fit.log_n[i];
        sy += fit.log_error[i];
        sxx += fit.log_n[i] * fit.log_n[i];
        sxy += fit.log_n[i] * fit.log_error[i];
    }
    const auto [lo, hi] = std::minmax_element(fit.log_n.begin(), fit.log_n.end());
    if (*lo == *hi) throw DegenerateInput("rate_fit needs distinct n values");
    const double denom = n * sxx - sx * sx;
    fit.slope = (n * sxy - sx * sy) / denom;
    fit.intercept = (sy - fit.slope * sx) / n;
    double ss = 0.0;
    for (size_t i = 0; i < ns.size(); ++i) {
        const double r = fit.log_error[i] - (fit.intercept + fit.slope * fit.log_n[i]);
        ss += r * r;
    }
    fit.residual_norm = std::sqrt(ss);
    return fit;
}

double order_violation_probability(const std::vector<FlowPath>& paths, double r) {
    if (paths.empty()) throw DegenerateInput("order_violation_probability needs replicas");
    long long bad = 0;
    for (const FlowPath& p : paths) {
        if (p.positions.empty() || p.positions.front().size() < 2)
            throw DegenerateInput("order_violation_probability needs >= 2 tracked starts");
        double min_gap = std::numeric_limits<double>::infinity();
        for (const auto& row : p.positions)
            for (size_t j = 0; j + 1 < row.size(); ++j)
                min_gap = std::min(min_gap, row[j + 1] - row[j]);
        if (min_gap < -r) ++bad;
    }
    return (double)bad / (double)paths.size();
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

std::vector<double> monotone_rearranged(std::vector<double> values) {
    std::sort(values.begin(), values.end());
    return values;
}

double ks_threshold(size_t n, double safety) {
    return safety * 1.628 / std::sqrt((double)n);
}

double ks_threshold_two_sample(size_t n, size_t m, double safety) {
    return safety * 1.628 * std::sqrt(((double)n + (double)m) / ((double)n * (double)m));
}

} // namespace coalflow
