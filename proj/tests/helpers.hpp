#pragma once

// Shared test helpers (unit suites + acceptance runner).

#include <cmath>
#include <string>
#include <vector>

#include "fsde/mat.hpp"
#include "fsde/rng.hpp"
#include "fsde/stable.hpp"

namespace testutil {

struct EcfCheck {
    bool ok;
    double worst_sigma; // largest |emp - exact| / stderr over the k grid
    std::string detail;
};

// Empirical E[cos<k,X>] against exp(-gamma^a ||k||^a) on a fixed grid of
// k-vectors; passes when every grid point is within `nsigma` standard errors.
inline EcfCheck ecf_check(const fsde::StableLaw& law, int d, long n,
                          std::uint64_t seed, double nsigma = 3.0,
                          int n_k = 10) {
    const fsde::Mat x = fsde::sample_isotropic_stable(law, d, n, seed);
    // deterministic k grid: magnitudes spread over [0.2, 1.4], directions
    // cycled through the axes and a diagonal
    fsde::Rng kr(seed ^ 0x5bd1e995, 99);
    EcfCheck res{true, 0.0, {}};
    for (int t = 0; t < n_k; ++t) {
        std::vector<double> k(d, 0.0);
        const double mag = 0.2 + 1.2 * t / std::max(1, n_k - 1);
        if (t % 3 == 2) {
            for (int j = 0; j < d; ++j) k[j] = mag / std::sqrt((double)d);
        } else {
            k[t % d] = mag;
        }
        double knorm = 0.0;
        for (double v : k) knorm += v * v;
        knorm = std::sqrt(knorm);
        const double exact =
            std::exp(-std::pow(law.gamma, law.alpha) * std::pow(knorm, law.alpha));
        double s = 0.0, s2 = 0.0;
        for (long i = 0; i < n; ++i) {
            double dot = 0.0;
            const double* row = x.row((int)i);
            for (int j = 0; j < d; ++j) dot += k[j] * row[j];
            const double c = std::cos(dot);
            s += c;
            s2 += c * c;
        }
        const double mean = s / n;
        const double var = std::max(1e-12, s2 / n - mean * mean);
        const double se = std::sqrt(var / n);
        const double sig = std::fabs(mean - exact) / se;
        if (sig > res.worst_sigma) res.worst_sigma = sig;
        if (sig > nsigma) {
            res.ok = false;
            res.detail = "k-point " + std::to_string(t) + ": " +
                         std::to_string(sig) + " sigma";
        }
    }
    return res;
}

inline double rel_l2(const std::vector<double>& pred,
                     const std::vector<double>& ref) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = pred[i] - ref[i];
        num += d * d;
        den += ref[i] * ref[i];
    }
    return std::sqrt(num / den);
}

} // namespace testutil
