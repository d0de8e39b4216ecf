#include "fsde/reference.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "fsde/kernels.hpp"

namespace fsde {

namespace {
constexpr double LOG_2PI = 1.83787706640934548356065947281123527;
constexpr double NEG_INF = -std::numeric_limits<double>::infinity();

// forward substitution with a lower-triangular Cholesky factor
void chol_solve_rows(const Mat& L, Mat& rows) {
    const int d = L.rows;
    for (int i = 0; i < rows.rows; ++i) {
        double* r = rows.row(i);
        for (int k = 0; k < d; ++k) {
            double s = r[k];
            for (int j = 0; j < k; ++j) s -= L(k, j) * r[j];
            r[k] = s / L(k, k);
        }
    }
}

struct StreamLse {
    double max = NEG_INF;
    double sum = 0.0;
    void add_chunk(double chunk_max, double chunk_sum) {
        if (chunk_sum <= 0.0 || chunk_max == NEG_INF) return;
        if (chunk_max > max) {
            sum = sum * std::exp(max - chunk_max) + chunk_sum;
            max = chunk_max;
        } else {
            sum += chunk_sum * std::exp(chunk_max - max);
        }
    }
    double value(long n) const {
        if (max == NEG_INF) return NEG_INF;
        return max + std::log(sum) - std::log((double)n);
    }
};

} // namespace

std::vector<double> mc_ll_oracle(Benchmark b, const SdeSpec& spec, double t,
                                 const Mat& eval_points, long n_mc,
                                 std::uint64_t seed, long* underflow_count) {
    if (!benchmark_has_exact_marginal(b))
        throw CapabilityError("mc_ll_oracle: benchmark " + benchmark_name(b) +
                              " has no known/sampled decomposition");
    const int d = spec.d;
    if (eval_points.cols != d) throw ShapeError("mc_ll_oracle: eval points must be n x d");
    if (n_mc < 1) throw ConfigError("mc_ll_oracle: n_mc must be >= 1");
    const long m = eval_points.rows;

    const bool gaussian_initial = spec.initial.has_score();
    const double shift_coef =
        b == Benchmark::OuLevy ? std::exp(-t / spec.levy_alpha) : 1.0;

    double gamma_t = 0.0;
    if (spec.has_levy() && t > 0.0) {
        const double base = b == Benchmark::OuLevy
                                ? std::pow(1.0 - std::exp(-t), 1.0 / spec.levy_alpha)
                                : std::pow(t, 1.0 / spec.levy_alpha);
        gamma_t = spec.levy_sigma * base;
    }
    // alpha = 2 stable noise is Gaussian N(0, 2 gamma^2 I): fold it
    const bool levy_is_gaussian = gamma_t > 0.0 && spec.levy_alpha == 2.0;
    const bool levy_sampled = gamma_t > 0.0 && !levy_is_gaussian &&
                              spec.levy_alpha != 1.0;

    // Gaussian covariance of the known component
    Mat C(d, d);
    bool have_gaussian = false;
    if (gaussian_initial) {
        const Mat ic = spec.initial.covariance();
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j) C(i, j) = shift_coef * shift_coef * ic(i, j);
        have_gaussian = true;
    }
    if (spec.has_brownian() && t > 0.0) {
        if (spec.diffusion == DiffusionTag::Identity) {
            for (int i = 0; i < d; ++i) C(i, i) += t;
        } else {
            const Mat bc = brownian_integral_cov(spec.B, t);
            for (std::size_t i = 0; i < C.size(); ++i) C.a[i] += bc.a[i];
        }
        have_gaussian = true;
    }
    if (levy_is_gaussian) {
        for (int i = 0; i < d; ++i) C(i, i) += 2.0 * gamma_t * gamma_t;
        have_gaussian = true;
    }

    // alpha = 1 has the closed-form isotropic Cauchy density: orient the
    // convolution with the Cauchy as the known side and sample the rest,
    // which keeps the kernel wide even when the Gaussian part is narrow
    if (gamma_t > 0.0 && spec.levy_alpha == 1.0) {
        std::vector<double> out_c((std::size_t)m, 0.0);
        Mat R((int)n_mc, d); // Gaussian part (+ non-Gaussian initial)
        Mat Lc;
        if (have_gaussian) Lc = cholesky(C);
        const bool par = kernels::mode() == kernels::Mode::Parallel;
#pragma omp parallel for schedule(static) if (par && n_mc > 4096)
        for (long j = 0; j < n_mc; ++j) {
            Rng rng(seed, 0x6f7261636cull);
            rng.set_block((std::uint64_t)j);
            double* row = R.row((int)j);
            if (!gaussian_initial && spec.initial.has_density()) {
                std::vector<double> x0((std::size_t)d);
                spec.initial.sample(rng, x0.data());
                for (int c = 0; c < d; ++c) row[c] = shift_coef * x0[(std::size_t)c];
            } else {
                for (int c = 0; c < d; ++c) row[c] = 0.0;
            }
            if (have_gaussian) {
                std::vector<double> z((std::size_t)d);
                for (int c = 0; c < d; ++c) z[(std::size_t)c] = rng.gauss();
                for (int r2 = 0; r2 < d; ++r2) {
                    double s = 0.0;
                    for (int c = 0; c <= r2; ++c) s += Lc(r2, c) * z[(std::size_t)c];
                    row[r2] += s;
                }
            }
        }
        long underflow = 0;
        constexpr long CHUNK = 8192;
#pragma omp parallel for schedule(dynamic, 1) if (par && m > 4)
        for (long i = 0; i < m; ++i) {
            StreamLse lse;
            for (long j0 = 0; j0 < n_mc; j0 += CHUNK) {
                const long j1 = std::min(n_mc, j0 + CHUNK);
                double cmax = NEG_INF;
                std::vector<double> vals((std::size_t)(j1 - j0));
                for (long j = j0; j < j1; ++j) {
                    const double* r = R.row((int)j);
                    double q = 0.0;
                    for (int c = 0; c < d; ++c) {
                        const double e = eval_points((int)i, c) - r[c];
                        q += e * e;
                    }
                    const double lg = cauchy_log_density(d, gamma_t, q);
                    vals[(std::size_t)(j - j0)] = lg;
                    if (lg > cmax) cmax = lg;
                }
                if (cmax == NEG_INF) continue;
                double csum = 0.0;
                for (double lg : vals) csum += std::exp(lg - cmax);
                lse.add_chunk(cmax, csum);
            }
            const double v = lse.value(n_mc);
            out_c[(std::size_t)i] = v;
            if (v == NEG_INF) {
#pragma omp atomic
                ++underflow;
            }
        }
        if (underflow_count) *underflow_count = underflow;
        return out_c;
    }

    // residual component: Levy part plus the non-Gaussian initial draw
    const bool residual_initial = !gaussian_initial;
    if (residual_initial && !spec.initial.has_density() && have_gaussian) {
        // point-mass initial folds into a zero shift; fine
    } else if (!have_gaussian && !spec.initial.has_density()) {
        throw CapabilityError("mc_ll_oracle: no density-bearing component");
    }

    std::vector<double> out((std::size_t)m, 0.0);
    long underflow = 0;

    if (have_gaussian) {
        // known = N(0, C); LL via whitened coordinates
        const Mat L = cholesky(C);
        double logdet = 0.0;
        for (int i = 0; i < d; ++i) logdet += std::log(L(i, i));
        const double cst = -0.5 * d * LOG_2PI - logdet;

        Mat U = eval_points;
        chol_solve_rows(L, U);

        const bool pure_gaussian = !levy_sampled && !residual_initial;
        if (pure_gaussian) {
            for (long i = 0; i < m; ++i) {
                double q = 0.0;
                for (int c = 0; c < d; ++c) q += U((int)i, c) * U((int)i, c);
                out[(std::size_t)i] = cst - 0.5 * q;
            }
            if (underflow_count) *underflow_count = 0;
            return out;
        }

        // draw residual samples once, whiten them once
        Mat R((int)n_mc, d);
        const StableLaw law = levy_sampled ? StableLaw(spec.levy_alpha, gamma_t)
                                           : StableLaw(2.0, 1.0);
        const bool par = kernels::mode() == kernels::Mode::Parallel;
#pragma omp parallel for schedule(static) if (par && n_mc > 4096)
        for (long j = 0; j < n_mc; ++j) {
            Rng rng(seed, 0x6f7261636cull);
            rng.set_block((std::uint64_t)j);
            double* row = R.row((int)j);
            if (residual_initial) {
                std::vector<double> x0((std::size_t)d);
                spec.initial.sample(rng, x0.data());
                for (int c = 0; c < d; ++c) row[c] = shift_coef * x0[(std::size_t)c];
            } else {
                for (int c = 0; c < d; ++c) row[c] = 0.0;
            }
            if (levy_sampled) {
                std::vector<double> l((std::size_t)d);
                draw_isotropic_stable(law, d, rng, l.data());
                for (int c = 0; c < d; ++c) row[c] += l[(std::size_t)c];
            }
        }
        chol_solve_rows(L, R);

        constexpr long CHUNK = 8192;
#pragma omp parallel for schedule(dynamic, 1) if (par && m > 4)
        for (long i = 0; i < m; ++i) {
            const double* u = U.row((int)i);
            StreamLse lse;
            for (long j0 = 0; j0 < n_mc; j0 += CHUNK) {
                const long j1 = std::min(n_mc, j0 + CHUNK);
                double cmax = NEG_INF;
                for (long j = j0; j < j1; ++j) {
                    const double* v = R.row((int)j);
                    double q = 0.0;
                    for (int c = 0; c < d; ++c) {
                        const double e = u[c] - v[c];
                        q += e * e;
                    }
                    const double lg = -0.5 * q;
                    if (lg > cmax) cmax = lg;
                }
                if (cmax == NEG_INF) continue;
                double csum = 0.0;
                for (long j = j0; j < j1; ++j) {
                    const double* v = R.row((int)j);
                    double q = 0.0;
                    for (int c = 0; c < d; ++c) {
                        const double e = u[c] - v[c];
                        q += e * e;
                    }
                    csum += std::exp(-0.5 * q - cmax);
                }
                lse.add_chunk(cmax, csum);
            }
            const double v = lse.value(n_mc);
            out[(std::size_t)i] = v == NEG_INF ? NEG_INF : cst + v;
            if (v == NEG_INF) {
#pragma omp atomic
                ++underflow;
            }
        }
    } else {
        // known = scaled initial density, residual = Levy part
        if (!spec.initial.has_density())
            throw CapabilityError("mc_ll_oracle: initial has no density");
        if (gamma_t == 0.0) {
            // degenerate: law is the scaled initial itself
            for (long i = 0; i < m; ++i) {
                std::vector<double> y((std::size_t)d);
                for (int c = 0; c < d; ++c) y[(std::size_t)c] = eval_points((int)i, c) / shift_coef;
                out[(std::size_t)i] =
                    spec.initial.log_density(y.data()) - d * std::log(shift_coef);
            }
            if (underflow_count) *underflow_count = 0;
            return out;
        }
        Mat R((int)n_mc, d);
        const StableLaw law(spec.levy_alpha, gamma_t);
        const bool par = kernels::mode() == kernels::Mode::Parallel;
#pragma omp parallel for schedule(static) if (par && n_mc > 4096)
        for (long j = 0; j < n_mc; ++j) {
            Rng rng(seed, 0x6f7261636cull);
            rng.set_block((std::uint64_t)j);
            draw_isotropic_stable(law, d, rng, R.row((int)j));
        }
        const double logcoef = d * std::log(shift_coef);
        constexpr long CHUNK = 8192;
#pragma omp parallel for schedule(dynamic, 1) if (par && m > 4)
        for (long i = 0; i < m; ++i) {
            StreamLse lse;
            std::vector<double> y((std::size_t)d);
            for (long j0 = 0; j0 < n_mc; j0 += CHUNK) {
                const long j1 = std::min(n_mc, j0 + CHUNK);
                double cmax = NEG_INF;
                std::vector<double> vals((std::size_t)(j1 - j0));
                for (long j = j0; j < j1; ++j) {
                    const double* r = R.row((int)j);
                    for (int c = 0; c < d; ++c)
                        y[(std::size_t)c] = (eval_points((int)i, c) - r[c]) / shift_coef;
                    const double lg = spec.initial.log_density(y.data()) - logcoef;
                    vals[(std::size_t)(j - j0)] = lg;
                    if (lg > cmax) cmax = lg;
                }
                if (cmax == NEG_INF) continue;
                double csum = 0.0;
                for (double lg : vals) csum += std::exp(lg - cmax);
                lse.add_chunk(cmax, csum);
            }
            const double v = lse.value(n_mc);
            out[(std::size_t)i] = v;
            if (v == NEG_INF) {
#pragma omp atomic
                ++underflow;
            }
        }
    }
    if (underflow_count) *underflow_count = underflow;
    return out;
}

RadialKdeResult radial_kde_ll(const Mat& samples, const Mat& eval_points,
                              double bandwidth) {
    const int d = samples.cols;
    if (eval_points.cols != d) throw ShapeError("radial_kde_ll: dimension mismatch");
    const long n = samples.rows;
    const long m = eval_points.rows;
    if (n < 10) throw ConfigError("radial_kde_ll: too few samples");

    std::vector<double> radii((std::size_t)n);
    for (long i = 0; i < n; ++i) {
        double r2 = 0.0;
        for (int c = 0; c < d; ++c) r2 += samples((int)i, c) * samples((int)i, c);
        radii[(std::size_t)i] = std::sqrt(r2);
    }

    RadialKdeResult out;
    if (bandwidth <= 0.0) {
        // Silverman on the radii
        double mean = 0.0;
        for (double r : radii) mean += r;
        mean /= (double)n;
        double var = 0.0;
        for (double r : radii) var += (r - mean) * (r - mean);
        var /= (double)(n - 1);
        std::vector<double> sorted = radii;
        std::sort(sorted.begin(), sorted.end());
        const double q1 = sorted[(std::size_t)(0.25 * (double)(n - 1))];
        const double q3 = sorted[(std::size_t)(0.75 * (double)(n - 1))];
        const double spread = std::min(std::sqrt(var), (q3 - q1) / 1.34);
        bandwidth = 0.9 * spread * std::pow((double)n, -0.2);
        if (!(bandwidth > 0.0)) throw NumericError("radial_kde_ll: degenerate bandwidth");
    }
    out.bandwidth = bandwidth;

    std::vector<double> sorted = radii;
    std::sort(sorted.begin(), sorted.end());
    const double first_decile = sorted[(std::size_t)(0.1 * (double)(n - 1))];

    // log of the spherical-area bracket: (d-1) log r + log(2 pi^{d/2} / Gamma(d/2))
    const double log_area_const = std::log(2.0) + 0.5 * d * std::log(3.14159265358979323846) -
                                  std::lgamma(0.5 * d);

    out.ll.assign((std::size_t)m, 0.0);
    out.extrapolated.assign((std::size_t)m, 0);
    const double inv_h = 1.0 / bandwidth;
    const double log_norm = -std::log((double)n) - std::log(bandwidth) -
                            0.5 * std::log(2.0 * 3.14159265358979323846);
    const bool par = kernels::mode() == kernels::Mode::Parallel;
#pragma omp parallel for schedule(static) if (par && m > 8)
    for (long i = 0; i < m; ++i) {
        double r2 = 0.0;
        for (int c = 0; c < d; ++c) r2 += eval_points((int)i, c) * eval_points((int)i, c);
        const double r = std::sqrt(r2);
        double s = 0.0;
        for (long j = 0; j < n; ++j) {
            const double z = (r - radii[(std::size_t)j]) * inv_h;
            s += std::exp(-0.5 * z * z);
        }
        const double log_f = s > 0.0 ? std::log(s) + log_norm : NEG_INF;
        out.ll[(std::size_t)i] = log_f - ((double)(d - 1) * std::log(r) + log_area_const);
        if (r < first_decile) out.extrapolated[(std::size_t)i] = 1;
    }
    return out;
}

std::vector<double> exact_ll(Benchmark b, const SdeSpec& spec, double t,
                             const Mat& eval_points) {
    const int d = spec.d;
    const long m = eval_points.rows;
    const double shift_coef =
        b == Benchmark::OuLevy ? std::exp(-t / spec.levy_alpha) : 1.0;
    double gamma_t = 0.0;
    if (spec.has_levy() && t > 0.0) {
        const double base = b == Benchmark::OuLevy
                                ? std::pow(1.0 - std::exp(-t), 1.0 / spec.levy_alpha)
                                : std::pow(t, 1.0 / spec.levy_alpha);
        gamma_t = spec.levy_sigma * base;
    }

    const bool levy_is_gaussian = spec.levy_alpha == 2.0 || gamma_t == 0.0;
    std::vector<double> out((std::size_t)m);

    if (spec.initial.has_score() && levy_is_gaussian) {
        // everything Gaussian: N(0, coef^2 Sigma + C_brownian + 2 gamma_t^2 I)
        Mat C(d, d);
        const Mat ic = spec.initial.covariance();
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j) C(i, j) = shift_coef * shift_coef * ic(i, j);
        if (spec.has_brownian() && t > 0.0) {
            if (spec.diffusion == DiffusionTag::Identity) {
                for (int i = 0; i < d; ++i) C(i, i) += t;
            } else {
                const Mat bc = brownian_integral_cov(spec.B, t);
                for (std::size_t i = 0; i < C.size(); ++i) C.a[i] += bc.a[i];
            }
        }
        for (int i = 0; i < d; ++i) C(i, i) += 2.0 * gamma_t * gamma_t;
        const Mat L = cholesky(C);
        double logdet = 0.0;
        for (int i = 0; i < d; ++i) logdet += std::log(L(i, i));
        Mat U = eval_points;
        chol_solve_rows(L, U);
        for (long i = 0; i < m; ++i) {
            double q = 0.0;
            for (int c = 0; c < d; ++c) q += U((int)i, c) * U((int)i, c);
            out[(std::size_t)i] = -0.5 * d * LOG_2PI - logdet - 0.5 * q;
        }
        return out;
    }

    if (spec.initial.kind == InitialKind::PointMassZero && !spec.has_brownian() &&
        gamma_t > 0.0) {
        if (spec.levy_alpha == 1.0) {
            for (long i = 0; i < m; ++i) {
                double r2 = 0.0;
                for (int c = 0; c < d; ++c)
                    r2 += eval_points((int)i, c) * eval_points((int)i, c);
                out[(std::size_t)i] = cauchy_log_density(d, gamma_t, r2);
            }
            return out;
        }
        if (spec.levy_alpha == 2.0) {
            const double v = 2.0 * gamma_t * gamma_t;
            for (long i = 0; i < m; ++i) {
                double r2 = 0.0;
                for (int c = 0; c < d; ++c)
                    r2 += eval_points((int)i, c) * eval_points((int)i, c);
                out[(std::size_t)i] =
                    -0.5 * d * std::log(2.0 * 3.14159265358979323846 * v) - 0.5 * r2 / v;
            }
            return out;
        }
    }

    throw CapabilityError("exact_ll: no closed form for benchmark " +
                          benchmark_name(b) + " at alpha=" +
                          std::to_string(spec.levy_alpha) + "; use mc_ll_oracle");
}

EvalReport make_report(const std::vector<double>& pred_ll,
                       const std::vector<double>& ref_ll, double drop_fraction,
                       const ReportMeta& meta) {
    if (pred_ll.size() != ref_ll.size())
        throw ShapeError("make_report: length mismatch");
    const long m = (long)ref_ll.size();
    if (m == 0) throw ConfigError("make_report: empty inputs");
    if (drop_fraction < 0.0 || drop_fraction >= 1.0)
        throw ConfigError("make_report: drop_fraction must be in [0, 1)");

    std::vector<long> idx((std::size_t)m);
    std::iota(idx.begin(), idx.end(), 0L);
    std::stable_sort(idx.begin(), idx.end(), [&](long a, long b) {
        return ref_ll[(std::size_t)a] < ref_ll[(std::size_t)b];
    });
    const long drop = (long)std::floor(drop_fraction * (double)m);
    const long kept = m - drop;
    if (kept <= 0) throw ConfigError("make_report: all points dropped");

    double max_ref = -std::numeric_limits<double>::infinity();
    for (long k = drop; k < m; ++k)
        max_ref = std::max(max_ref, ref_ll[(std::size_t)idx[(std::size_t)k]]);
    if (!std::isfinite(max_ref))
        throw NumericError("make_report: reference LL not finite after filtering");

    double ll_num = 0.0, ll_den = 0.0, ll_dmax = 0.0, ll_amax = 0.0;
    double pdf_num = 0.0, pdf_den = 0.0, pdf_dmax = 0.0, pdf_amax = 0.0;
    for (long k = drop; k < m; ++k) {
        const long i = idx[(std::size_t)k];
        const double p = pred_ll[(std::size_t)i];
        const double r = ref_ll[(std::size_t)i];
        const double dd = p - r;
        ll_num += dd * dd;
        ll_den += r * r;
        ll_dmax = std::max(ll_dmax, std::fabs(dd));
        ll_amax = std::max(ll_amax, std::fabs(r));
        const double wp = std::exp(p - max_ref);
        const double wr = std::exp(r - max_ref);
        const double wd = wp - wr;
        pdf_num += wd * wd;
        pdf_den += wr * wr;
        pdf_dmax = std::max(pdf_dmax, std::fabs(wd));
        pdf_amax = std::max(pdf_amax, wr);
    }
    EvalReport rep;
    rep.ll_rel_l2 = std::sqrt(ll_num / ll_den);
    rep.ll_rel_linf = ll_dmax / ll_amax;
    rep.pdf_rel_l2 = std::sqrt(pdf_num / pdf_den);
    rep.pdf_rel_linf = pdf_dmax / pdf_amax;
    rep.n_test_kept = kept;
    rep.n_test_dropped = drop;
    rep.benchmark = meta.benchmark;
    rep.d = meta.d;
    rep.alpha = meta.alpha;
    rep.seed = meta.seed;
    return rep;
}

} // namespace fsde
