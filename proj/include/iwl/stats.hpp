#pragma once

// Small statistics toolkit: moments, log-log slope fits and two-sample tests.

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

namespace iwl::stats {

inline double mean(std::span<const double> x) {
    if (x.empty()) return 0.0;
    double s = 0.0;
    for (double v : x) s += v;
    return s / static_cast<double>(x.size());
}

/// Unbiased sample variance (0 for fewer than two samples).
inline double variance(std::span<const double> x) {
    if (x.size() < 2) return 0.0;
    const double m = mean(x);
    double s = 0.0;
    for (double v : x) s += (v - m) * (v - m);
    return s / static_cast<double>(x.size() - 1);
}

inline double standard_error(std::span<const double> x) {
    if (x.size() < 2) return 0.0;
    return std::sqrt(variance(x) / static_cast<double>(x.size()));
}

inline double rms(std::span<const double> x) {
    if (x.empty()) return 0.0;
    double s = 0.0;
    for (double v : x) s += v * v;
    return std::sqrt(s / static_cast<double>(x.size()));
}

inline double max_abs(std::span<const double> x) {
    double m = 0.0;
    for (double v : x) m = std::max(m, std::abs(v));
    return m;
}

struct SlopeFit {
    double slope = 0.0;
    double intercept = 0.0;
    double slope_se = 0.0;
    double ci_low = 0.0;   ///< 95% confidence interval on the slope
    double ci_high = 0.0;
};

/// Least-squares fit of log(y) = a + b log(x). The interval uses Student-t
/// quantiles with n - 2 degrees of freedom; with exactly two points it
/// collapses to the slope itself.
inline SlopeFit fit_loglog(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("fit_loglog: need at least two points");
    const std::size_t n = x.size();
    std::vector<double> lx(n), ly(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (!(x[i] > 0.0) || !(y[i] > 0.0)) throw std::invalid_argument("fit_loglog: values must be positive");
        lx[i] = std::log(x[i]);
        ly[i] = std::log(y[i]);
    }
    const double mx = mean(lx), my = mean(ly);
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sxx += (lx[i] - mx) * (lx[i] - mx);
        sxy += (lx[i] - mx) * (ly[i] - my);
    }
    if (sxx == 0.0) throw std::invalid_argument("fit_loglog: levels must differ");
    SlopeFit f;
    f.slope = sxy / sxx;
    f.intercept = my - f.slope * mx;
    f.ci_low = f.ci_high = f.slope;
    if (n > 2) {
        double sse = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double r = ly[i] - f.intercept - f.slope * lx[i];
            sse += r * r;
        }
        const double dof = static_cast<double>(n - 2);
        f.slope_se = std::sqrt(sse / dof / sxx);
        const double q = boost::math::quantile(boost::math::students_t(dof), 0.975);
        f.ci_low = f.slope - q * f.slope_se;
        f.ci_high = f.slope + q * f.slope_se;
    }
    return f;
}

struct TestResult {
    double statistic = 0.0;
    double p_value = 1.0;
};

/// Two-sample Kolmogorov-Smirnov test with the asymptotic p-value.
inline TestResult ks_two_sample(std::span<const double> a, std::span<const double> b) {
    if (a.empty() || b.empty()) throw std::invalid_argument("ks_two_sample: empty sample");
    std::vector<double> x(a.begin(), a.end()), y(b.begin(), b.end());
    std::sort(x.begin(), x.end());
    std::sort(y.begin(), y.end());
    const double n = static_cast<double>(x.size()), m = static_cast<double>(y.size());
    std::size_t i = 0, j = 0;
    double d = 0.0;
    while (i < x.size() && j < y.size()) {
        const double v = std::min(x[i], y[j]);
        while (i < x.size() && x[i] <= v) ++i;
        while (j < y.size() && y[j] <= v) ++j;
        d = std::max(d, std::abs(static_cast<double>(i) / n - static_cast<double>(j) / m));
    }
    const double ne = n * m / (n + m);
    const double lambda = (std::sqrt(ne) + 0.12 + 0.11 / std::sqrt(ne)) * d;
    // Kolmogorov tail: 2 sum (-1)^{k-1} exp(-2 k^2 lambda^2)
    double p = 0.0;
    if (lambda < 0.2) {
        p = 1.0;
    } else {
        for (int k = 1; k <= 100; ++k) {
            const double term = 2.0 * ((k % 2) ? 1.0 : -1.0) * std::exp(-2.0 * k * k * lambda * lambda);
            p += term;
            if (std::abs(term) < 1e-12) break;
        }
        p = std::clamp(p, 0.0, 1.0);
    }
    return {d, p};
}

/// Welch two-sample t-test for equal means.
inline TestResult welch_t_test(std::span<const double> a, std::span<const double> b) {
    if (a.size() < 2 || b.size() < 2) throw std::invalid_argument("welch_t_test: need two samples of size >= 2");
    const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
    const double va = variance(a) / na, vb = variance(b) / nb;
    const double se = std::sqrt(va + vb);
    if (se == 0.0) return {0.0, mean(a) == mean(b) ? 1.0 : 0.0};
    const double t = (mean(a) - mean(b)) / se;
    const double dof = (va + vb) * (va + vb) / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
    const double p = 2.0 * boost::math::cdf(boost::math::complement(boost::math::students_t(dof), std::abs(t)));
    return {t, p};
}

}  // namespace iwl::stats
