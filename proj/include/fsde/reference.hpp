#pragma once

#include <string>
#include <vector>

#include "fsde/mat.hpp"
#include "fsde/sde.hpp"

namespace fsde {

struct EvalReport {
    double ll_rel_l2 = 0.0, ll_rel_linf = 0.0;
    double pdf_rel_l2 = 0.0, pdf_rel_linf = 0.0;
    long n_test_kept = 0, n_test_dropped = 0;
    std::string benchmark;
    int d = 0;
    double alpha = 0.0;
    std::uint64_t seed = 0;
};

struct ReportMeta {
    std::string benchmark;
    int d = 0;
    double alpha = 0.0;
    std::uint64_t seed = 0;
};

// Monte-Carlo LL oracle: LL(x) = log (1/n) sum_j p_known(x - R_j) with a
// max-shifted streaming log-sum-exp over fixed chunks. The known-density
// component folds every Gaussian piece (Gaussian initial and Brownian
// integral); the sampled residual R carries the rest (Levy part, plus the
// initial draw when it is not Gaussian). Points whose every summand
// underflows produce -inf and are counted in underflow_count.
std::vector<double> mc_ll_oracle(Benchmark b, const SdeSpec& spec, double t,
                                 const Mat& eval_points, long n_mc,
                                 std::uint64_t seed,
                                 long* underflow_count = nullptr);

struct RadialKdeResult {
    std::vector<double> ll;
    std::vector<char> extrapolated; // eval radius below the lowest sample decile
    double bandwidth = 0.0;
};

// Radial-KDE LL for isotropic laws:
// LL(x) = log f_R(||x||) - [(d-1) log ||x|| + log(2 pi^{d/2} / Gamma(d/2))].
// bandwidth 0 selects Silverman's rule on the radii.
RadialKdeResult radial_kde_ll(const Mat& samples, const Mat& eval_points,
                              double bandwidth = 0.0);

// Closed-form LL where one exists (all-Gaussian combinations, isotropic
// Cauchy); otherwise throws CapabilityError pointing at mc_ll_oracle.
std::vector<double> exact_ll(Benchmark b, const SdeSpec& spec, double t,
                             const Mat& eval_points);

// Sorts by reference LL, drops the lowest fraction, then reports relative
// L2 and Linf errors of LL and of PDF = exp(LL - max kept ref LL).
EvalReport make_report(const std::vector<double>& pred_ll,
                       const std::vector<double>& ref_ll, double drop_fraction,
                       const ReportMeta& meta = {});

} // namespace fsde
