#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "fsde/common.hpp"

namespace fsde {

struct KsResult {
    double d;
    double pvalue;
};

// Asymptotic Kolmogorov distribution complement Q(lambda) = 2 sum (-1)^{k-1} e^{-2k^2 lambda^2}
inline double ks_q(double lambda) {
    if (lambda < 1e-3) return 1.0;
    double s = 0.0;
    double sign = 1.0;
    for (int k = 1; k <= 100; ++k) {
        const double term = std::exp(-2.0 * k * k * lambda * lambda);
        s += sign * term;
        sign = -sign;
        if (term < 1e-16) break;
    }
    return std::clamp(2.0 * s, 0.0, 1.0);
}

inline KsResult two_sample_ks(std::vector<double> a, std::vector<double> b) {
    if (a.empty() || b.empty()) throw ShapeError("two_sample_ks: empty sample");
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    const std::size_t n = a.size(), m = b.size();
    std::size_t i = 0, j = 0;
    double d = 0.0;
    while (i < n && j < m) {
        const double x = std::min(a[i], b[j]);
        while (i < n && a[i] <= x) ++i;
        while (j < m && b[j] <= x) ++j;
        d = std::max(d, std::fabs((double)i / n - (double)j / m));
    }
    const double ne = std::sqrt((double)n * m / (double)(n + m));
    const double lambda = (ne + 0.12 + 0.11 / ne) * d;
    return {d, ks_q(lambda)};
}

inline KsResult one_sample_ks(std::vector<double> a,
                              const std::function<double(double)>& cdf) {
    if (a.empty()) throw ShapeError("one_sample_ks: empty sample");
    std::sort(a.begin(), a.end());
    const std::size_t n = a.size();
    double d = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double f = cdf(a[i]);
        d = std::max(d, std::fabs(f - (double)i / n));
        d = std::max(d, std::fabs((double)(i + 1) / n - f));
    }
    const double ne = std::sqrt((double)n);
    const double lambda = (ne + 0.12 + 0.11 / ne) * d;
    return {d, ks_q(lambda)};
}

// W1 distance between equal-size empirical distributions: mean |order-stat difference|.
inline double wasserstein1(std::vector<double> a, std::vector<double> b) {
    if (a.size() != b.size() || a.empty())
        throw ShapeError("wasserstein1: sizes must match and be nonzero");
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += std::fabs(a[i] - b[i]);
    return s / (double)a.size();
}

inline double ols_slope(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2) throw ShapeError("ols_slope: bad sizes");
    const double n = (double)x.size();
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sx += x[i];
        sy += y[i];
        sxx += x[i] * x[i];
        sxy += x[i] * y[i];
    }
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

} // namespace fsde
