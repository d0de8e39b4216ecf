#include "fsde/sde.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "fsde/kernels.hpp"

namespace fsde {

namespace {
constexpr double LOG2 = 0.69314718055994530941723212145817657;
constexpr double LOG_2PI = 1.83787706640934548356065947281123527;
} // namespace

std::vector<double> lambda_pattern(int d, std::uint64_t seed) {
    Rng rng(seed, 0x6c616d);
    std::vector<double> lam((std::size_t)d);
    for (int i = 0; i < d; ++i) {
        if (i % 2 == 0) {
            // redraw until the rounded reciprocal product is exactly 1, so
            // paired entries multiply to 1 in floating point as well
            double u, w;
            do {
                u = rng.uniform(1.0, 2.0);
                w = 1.0 / u;
            } while (u * w != 1.0);
            lam[(std::size_t)i] = u;
        } else {
            lam[(std::size_t)i] = 1.0 / lam[(std::size_t)i - 1];
        }
    }
    return lam;
}

InitialDistribution InitialDistribution::unit_gaussian(int d) {
    return {InitialKind::UnitGaussian, d, {}};
}
InitialDistribution InitialDistribution::anisotropic(int d, std::uint64_t seed) {
    return {InitialKind::AnisotropicGaussian, d, lambda_pattern(d, seed)};
}
InitialDistribution InitialDistribution::unit_laplacian(int d) {
    return {InitialKind::UnitLaplacian, d, {}};
}
InitialDistribution InitialDistribution::mixture(int d) {
    return {InitialKind::GaussLaplaceMixture, d, {}};
}
InitialDistribution InitialDistribution::point_mass_zero(int d) {
    return {InitialKind::PointMassZero, d, {}};
}

void InitialDistribution::sample(Rng& rng, double* out) const {
    switch (kind) {
        case InitialKind::AnisotropicGaussian:
            for (int i = 0; i < d; ++i)
                out[i] = std::sqrt(lambdas[(std::size_t)i]) * rng.gauss();
            break;
        case InitialKind::UnitGaussian:
            for (int i = 0; i < d; ++i) out[i] = rng.gauss();
            break;
        case InitialKind::UnitLaplacian:
            for (int i = 0; i < d; ++i) {
                const double e = rng.exponential();
                out[i] = rng.uniform() < 0.5 ? -e : e;
            }
            break;
        case InitialKind::GaussLaplaceMixture: {
            const bool gaussian = rng.uniform() < 0.5;
            if (gaussian) {
                for (int i = 0; i < d; ++i) out[i] = rng.gauss();
            } else {
                for (int i = 0; i < d; ++i) {
                    const double e = rng.exponential();
                    out[i] = rng.uniform() < 0.5 ? -e : e;
                }
            }
            break;
        }
        case InitialKind::PointMassZero:
            for (int i = 0; i < d; ++i) out[i] = 0.0;
            break;
    }
}

double InitialDistribution::log_density(const double* x) const {
    switch (kind) {
        case InitialKind::AnisotropicGaussian: {
            double q = 0.0, ld = 0.0;
            for (int i = 0; i < d; ++i) {
                q += x[i] * x[i] / lambdas[(std::size_t)i];
                ld += std::log(lambdas[(std::size_t)i]);
            }
            return -0.5 * d * LOG_2PI - 0.5 * ld - 0.5 * q;
        }
        case InitialKind::UnitGaussian: {
            double q = 0.0;
            for (int i = 0; i < d; ++i) q += x[i] * x[i];
            return -0.5 * d * LOG_2PI - 0.5 * q;
        }
        case InitialKind::UnitLaplacian: {
            double s = 0.0;
            for (int i = 0; i < d; ++i) s += std::fabs(x[i]);
            return -d * LOG2 - s;
        }
        case InitialKind::GaussLaplaceMixture: {
            double qg = 0.0, sl = 0.0;
            for (int i = 0; i < d; ++i) {
                qg += x[i] * x[i];
                sl += std::fabs(x[i]);
            }
            const double lg = -0.5 * d * LOG_2PI - 0.5 * qg;
            const double ll = -d * LOG2 - sl;
            const double m = std::max(lg, ll);
            return m + std::log(0.5 * std::exp(lg - m) + 0.5 * std::exp(ll - m));
        }
        case InitialKind::PointMassZero:
            throw CapabilityError("point-mass initial has no density");
    }
    throw NumericError("unreachable");
}

bool InitialDistribution::has_density() const {
    return kind != InitialKind::PointMassZero;
}

bool InitialDistribution::has_score() const {
    return kind == InitialKind::AnisotropicGaussian || kind == InitialKind::UnitGaussian;
}

std::vector<double> InitialDistribution::score(const double* x) const {
    if (!has_score())
        throw CapabilityError("initial score only available for Gaussian kinds");
    std::vector<double> s((std::size_t)d);
    for (int i = 0; i < d; ++i) {
        const double v = kind == InitialKind::AnisotropicGaussian
                             ? lambdas[(std::size_t)i]
                             : 1.0;
        s[(std::size_t)i] = -x[i] / v;
    }
    return s;
}

Mat InitialDistribution::covariance() const {
    if (!has_score()) throw CapabilityError("covariance only for Gaussian kinds");
    Mat c(d, d);
    for (int i = 0; i < d; ++i)
        c(i, i) = kind == InitialKind::AnisotropicGaussian ? lambdas[(std::size_t)i] : 1.0;
    return c;
}

Mat InitialDistribution::inv_covariance() const {
    if (!has_score()) throw CapabilityError("covariance only for Gaussian kinds");
    Mat c(d, d);
    for (int i = 0; i < d; ++i)
        c(i, i) = kind == InitialKind::AnisotropicGaussian
                      ? 1.0 / lambdas[(std::size_t)i]
                      : 1.0;
    return c;
}

TimeGrid TimeGrid::uniform(double T, long steps) {
    if (!(T > 0.0) || steps < 1) throw ConfigError("TimeGrid: need T > 0, steps >= 1");
    TimeGrid g;
    g.t.resize((std::size_t)steps + 1);
    for (long j = 0; j <= steps; ++j) g.t[(std::size_t)j] = T * (double)j / (double)steps;
    return g;
}

void TimeGrid::validate() const {
    if (t.size() < 2) throw ConfigError("TimeGrid: need at least two times");
    if (t.front() != 0.0) throw ConfigError("TimeGrid: must start at 0");
    for (std::size_t j = 0; j + 1 < t.size(); ++j) {
        if (!(t[j] < t[j + 1])) throw ConfigError("TimeGrid: not strictly increasing");
        if (!std::isfinite(t[j + 1])) throw ConfigError("TimeGrid: non-finite time");
    }
}

void SdeSpec::drift_eval(const double* x, double t, double* out) const {
    (void)t;
    switch (drift) {
        case DriftTag::Zero:
            for (int i = 0; i < d; ++i) out[i] = 0.0;
            break;
        case DriftTag::Linear:
            for (int i = 0; i < d; ++i) out[i] = -x[i];
            break;
        case DriftTag::LinearOverAlpha:
            for (int i = 0; i < d; ++i) out[i] = -x[i] / levy_alpha;
            break;
        case DriftTag::TanhRadial: {
            double r2 = 0.0;
            for (int i = 0; i < d; ++i) r2 += x[i] * x[i];
            const double th = std::tanh(std::sqrt(r2) / std::sqrt((double)d));
            for (int i = 0; i < d; ++i) out[i] = -x[i] * th;
            break;
        }
        case DriftTag::Polynomial: {
            double r2 = 0.0;
            for (int i = 0; i < d; ++i) r2 += x[i] * x[i];
            for (int i = 0; i < d; ++i) out[i] = (1.0 - r2) * x[i];
            break;
        }
    }
}

Mat SdeSpec::drift_jacobian(const double* x, double t) const {
    (void)t;
    Mat J(d, d);
    switch (drift) {
        case DriftTag::Zero: break;
        case DriftTag::Linear:
            for (int i = 0; i < d; ++i) J(i, i) = -1.0;
            break;
        case DriftTag::LinearOverAlpha:
            for (int i = 0; i < d; ++i) J(i, i) = -1.0 / levy_alpha;
            break;
        case DriftTag::TanhRadial: {
            double r2 = 0.0;
            for (int i = 0; i < d; ++i) r2 += x[i] * x[i];
            const double r = std::sqrt(r2);
            const double sd = std::sqrt((double)d);
            const double u = r / sd;
            const double th = std::tanh(u);
            const double sech2 = 1.0 - th * th;
            for (int i = 0; i < d; ++i)
                for (int j = 0; j < d; ++j) {
                    double v = i == j ? -th : 0.0;
                    if (r > 1e-14) v -= x[i] * x[j] * sech2 / (r * sd);
                    J(i, j) = v;
                }
            break;
        }
        case DriftTag::Polynomial: {
            double r2 = 0.0;
            for (int i = 0; i < d; ++i) r2 += x[i] * x[i];
            for (int i = 0; i < d; ++i)
                for (int j = 0; j < d; ++j)
                    J(i, j) = (i == j ? 1.0 - r2 : 0.0) - 2.0 * x[i] * x[j];
            break;
        }
    }
    return J;
}

double SdeSpec::drift_divergence(const double* x, double t) const {
    (void)t;
    switch (drift) {
        case DriftTag::Zero: return 0.0;
        case DriftTag::Linear: return -(double)d;
        case DriftTag::LinearOverAlpha: return -(double)d / levy_alpha;
        case DriftTag::TanhRadial: {
            double r2 = 0.0;
            for (int i = 0; i < d; ++i) r2 += x[i] * x[i];
            const double u = std::sqrt(r2) / std::sqrt((double)d);
            const double th = std::tanh(u);
            return -(double)d * th - u * (1.0 - th * th);
        }
        case DriftTag::Polynomial: {
            double r2 = 0.0;
            for (int i = 0; i < d; ++i) r2 += x[i] * x[i];
            return (double)d * (1.0 - r2) - 2.0 * r2;
        }
    }
    throw NumericError("unreachable");
}

void SdeSpec::drift_divergence_gradient(const double* x, double t, double* out) const {
    (void)t;
    switch (drift) {
        case DriftTag::Zero:
        case DriftTag::Linear:
        case DriftTag::LinearOverAlpha:
            for (int i = 0; i < d; ++i) out[i] = 0.0;
            break;
        case DriftTag::TanhRadial: {
            double r2 = 0.0;
            for (int i = 0; i < d; ++i) r2 += x[i] * x[i];
            const double r = std::sqrt(r2);
            const double sd = std::sqrt((double)d);
            if (r < 1e-14) {
                for (int i = 0; i < d; ++i) out[i] = 0.0;
                break;
            }
            const double u = r / sd;
            const double th = std::tanh(u);
            const double sech2 = 1.0 - th * th;
            // d/du of (-d th - u sech^2) times du/dx_k = x_k / (r sqrt(d))
            const double dfdu = sech2 * (2.0 * u * th - (double)(d + 1));
            for (int i = 0; i < d; ++i) out[i] = dfdu * x[i] / (r * sd);
            break;
        }
        case DriftTag::Polynomial:
            for (int i = 0; i < d; ++i) out[i] = -2.0 * (double)(d + 2) * x[i];
            break;
    }
}

Mat SdeSpec::diffusion_matrix(double t) const {
    switch (diffusion) {
        case DiffusionTag::Zero: return Mat(d, d);
        case DiffusionTag::Identity: return identity(d);
        case DiffusionTag::BPlusTI: {
            Mat g = B;
            for (int i = 0; i < d; ++i) g(i, i) += t;
            return g;
        }
    }
    throw NumericError("unreachable");
}

Mat SdeSpec::ggt(double t) const {
    if (diffusion == DiffusionTag::Zero) return Mat(d, d);
    if (diffusion == DiffusionTag::Identity) return identity(d);
    const Mat g = diffusion_matrix(t);
    return matmul_nt(g, g);
}

namespace {

// z first, then the Levy increment; both schemes share this order
void draw_step_noise(const SdeSpec& spec, double t, double dt, Rng& rng,
                     double* noise) {
    const int d = spec.d;
    for (int i = 0; i < d; ++i) noise[i] = 0.0;
    if (spec.has_brownian()) {
        const double sdt = std::sqrt(dt);
        if (spec.diffusion == DiffusionTag::Identity) {
            for (int i = 0; i < d; ++i) noise[i] += sdt * rng.gauss();
        } else {
            const Mat g = spec.diffusion_matrix(t);
            std::vector<double> z((std::size_t)d);
            for (int i = 0; i < d; ++i) z[(std::size_t)i] = rng.gauss();
            for (int i = 0; i < d; ++i) {
                double s = 0.0;
                for (int j = 0; j < d; ++j) s += g(i, j) * z[(std::size_t)j];
                noise[i] += sdt * s;
            }
        }
    }
    if (spec.has_levy()) {
        const StableLaw law(spec.levy_alpha, std::pow(dt, 1.0 / spec.levy_alpha));
        std::vector<double> l((std::size_t)d);
        draw_isotropic_stable(law, d, rng, l.data());
        for (int i = 0; i < d; ++i) noise[i] += spec.levy_sigma * l[(std::size_t)i];
    }
}

std::string state_dump(const double* x, int d, double t, double dt) {
    std::ostringstream os;
    os << "t=" << t << " dt=" << dt << " x=[";
    for (int i = 0; i < d; ++i) os << (i ? "," : "") << x[i];
    os << "]";
    return os.str();
}

} // namespace

void forward_em_step(const SdeSpec& spec, const double* x, double t, double dt,
                     Rng& rng, double* out) {
    if (!(dt > 0.0)) throw ConfigError("forward_em_step: dt must be > 0");
    const int d = spec.d;
    std::vector<double> f((std::size_t)d), noise((std::size_t)d);
    spec.drift_eval(x, t, f.data());
    for (int i = 0; i < d; ++i)
        if (!std::isfinite(f[(std::size_t)i]))
            throw StepError("forward_em_step: non-finite drift at " +
                            state_dump(x, d, t, dt));
    draw_step_noise(spec, t, dt, rng, noise.data());
    for (int i = 0; i < d; ++i)
        out[i] = x[i] + f[(std::size_t)i] * dt + noise[(std::size_t)i];
}

void implicit_em_step(const SdeSpec& spec, const double* x, double t, double dt,
                      Rng& rng, const NewtonConfig& cfg, double* out) {
    if (!(dt > 0.0)) throw ConfigError("implicit_em_step: dt must be > 0");
    const int d = spec.d;
    std::vector<double> noise((std::size_t)d), rhs((std::size_t)d);
    draw_step_noise(spec, t, dt, rng, noise.data());
    for (int i = 0; i < d; ++i) rhs[(std::size_t)i] = x[i] + noise[(std::size_t)i];

    const double tn = t + dt;
    std::vector<double> y = rhs; // Euler predictor
    std::vector<double> f((std::size_t)d), F((std::size_t)d);

    for (int it = 0; it < cfg.max_iters; ++it) {
        spec.drift_eval(y.data(), tn, f.data());
        for (int i = 0; i < d; ++i)
            F[(std::size_t)i] =
                y[(std::size_t)i] - dt * f[(std::size_t)i] - rhs[(std::size_t)i];
        Mat J = spec.drift_jacobian(y.data(), tn);
        for (auto& v : J.a) v = -dt * v;
        for (int i = 0; i < d; ++i) J(i, i) += 1.0;
        std::vector<double> negF((std::size_t)d);
        for (int i = 0; i < d; ++i) negF[(std::size_t)i] = -F[(std::size_t)i];
        std::vector<double> delta;
        try {
            delta = solve_lu(J, negF);
        } catch (const NumericError&) {
            break; // singular Jacobian: fall through to fixed point
        }
        double nrm = 0.0;
        for (int i = 0; i < d; ++i) {
            y[(std::size_t)i] += delta[(std::size_t)i];
            nrm += delta[(std::size_t)i] * delta[(std::size_t)i];
        }
        if (std::sqrt(nrm) < cfg.tol) {
            for (int i = 0; i < d; ++i) out[i] = y[(std::size_t)i];
            return;
        }
    }

    // damped fixed point fallback on y = rhs + dt f(y)
    y = rhs;
    for (int it = 0; it < cfg.fixed_point_iters; ++it) {
        spec.drift_eval(y.data(), tn, f.data());
        double nrm = 0.0;
        for (int i = 0; i < d; ++i) {
            const double target = rhs[(std::size_t)i] + dt * f[(std::size_t)i];
            const double step = cfg.damping * (target - y[(std::size_t)i]);
            y[(std::size_t)i] += step;
            nrm += step * step;
        }
        if (std::sqrt(nrm) < cfg.tol) {
            for (int i = 0; i < d; ++i) out[i] = y[(std::size_t)i];
            return;
        }
    }
    throw StepError("implicit_em_step: Newton and fixed point both failed at " +
                    state_dump(x, d, t, dt));
}

std::vector<SampleBatch> simulate(const SdeSpec& spec, Scheme scheme,
                                  const TimeGrid& grid, long n, std::uint64_t seed,
                                  const std::vector<long>* record,
                                  const NewtonConfig& cfg) {
    grid.validate();
    if (n < 1) throw ConfigError("simulate: n must be >= 1");
    const long N = grid.steps();
    std::vector<long> rec;
    if (record) {
        rec = *record;
        for (long j : rec)
            if (j < 0 || j > N) throw ConfigError("simulate: record index out of range");
    } else {
        rec.resize((std::size_t)N + 1);
        for (long j = 0; j <= N; ++j) rec[(std::size_t)j] = j;
    }
    std::vector<long> rec_slot((std::size_t)N + 1, -1);
    for (std::size_t s = 0; s < rec.size(); ++s) rec_slot[(std::size_t)rec[s]] = (long)s;

    std::vector<SampleBatch> out(rec.size());
    for (std::size_t s = 0; s < rec.size(); ++s) {
        out[s].t = grid.t[(std::size_t)rec[s]];
        out[s].points = Mat((int)n, spec.d);
        out[s].provenance = scheme == Scheme::Forward ? "em-forward" : "em-implicit";
        out[s].seed = seed;
    }

    std::string first_error;
    const bool par = kernels::mode() == kernels::Mode::Parallel;
#pragma omp parallel for schedule(static) if (par && n > 8)
    for (long traj = 0; traj < n; ++traj) {
        try {
            Rng rng(seed, (std::uint64_t)traj + 1);
            std::vector<double> x((std::size_t)spec.d), xn((std::size_t)spec.d);
            spec.initial.sample(rng, x.data());
            if (rec_slot[0] >= 0)
                std::memcpy(out[(std::size_t)rec_slot[0]].points.row((int)traj),
                            x.data(), sizeof(double) * (std::size_t)spec.d);
            for (long j = 0; j < N; ++j) {
                const double t = grid.t[(std::size_t)j];
                const double dt = grid.dt(j);
                if (scheme == Scheme::Forward)
                    forward_em_step(spec, x.data(), t, dt, rng, xn.data());
                else
                    implicit_em_step(spec, x.data(), t, dt, rng, cfg, xn.data());
                x.swap(xn);
                const long slot = rec_slot[(std::size_t)j + 1];
                if (slot >= 0)
                    std::memcpy(out[(std::size_t)slot].points.row((int)traj), x.data(),
                                sizeof(double) * (std::size_t)spec.d);
            }
        } catch (const std::exception& e) {
#pragma omp critical
            if (first_error.empty())
                first_error = "trajectory " + std::to_string(traj) + ": " + e.what();
        }
    }
    if (!first_error.empty()) throw StepError("simulate: " + first_error);
    return out;
}

Benchmark benchmark_from_string(const std::string& s) {
    if (s == "pure-levy") return Benchmark::PureLevy;
    if (s == "basic") return Benchmark::Basic;
    if (s == "complicated") return Benchmark::Complicated;
    if (s == "ou") return Benchmark::OuLevy;
    if (s == "tanh") return Benchmark::TanhDrift;
    if (s == "polynomial") return Benchmark::Polynomial;
    if (s == "heat1d") return Benchmark::Heat1d;
    throw ConfigError("unknown benchmark '" + s + "'");
}

std::string benchmark_name(Benchmark b) {
    switch (b) {
        case Benchmark::PureLevy: return "pure-levy";
        case Benchmark::Basic: return "basic";
        case Benchmark::Complicated: return "complicated";
        case Benchmark::OuLevy: return "ou";
        case Benchmark::TanhDrift: return "tanh";
        case Benchmark::Polynomial: return "polynomial";
        case Benchmark::Heat1d: return "heat1d";
    }
    throw NumericError("unreachable");
}

SdeSpec make_benchmark(Benchmark b, int d, double alpha, std::uint64_t seed,
                       std::optional<InitialKind> initial) {
    if (d < 1) throw ConfigError("make_benchmark: d must be >= 1");
    SdeSpec s;
    s.d = d;
    s.levy_alpha = alpha;
    switch (b) {
        case Benchmark::PureLevy:
            s.drift = DriftTag::Zero;
            s.diffusion = DiffusionTag::Zero;
            s.levy_sigma = 1.0;
            s.horizon = 1.0;
            s.initial = InitialDistribution::unit_gaussian(d);
            break;
        case Benchmark::Basic:
            s.drift = DriftTag::Zero;
            s.diffusion = DiffusionTag::Identity;
            s.levy_sigma = 1.0;
            s.horizon = 1.0;
            s.initial = InitialDistribution::anisotropic(d, seed);
            break;
        case Benchmark::Complicated:
            s.drift = DriftTag::Zero;
            s.diffusion = DiffusionTag::BPlusTI;
            s.B = make_b_matrix(d, seed);
            s.levy_sigma = 1.0;
            s.horizon = 1.0;
            s.initial = InitialDistribution::unit_gaussian(d);
            break;
        case Benchmark::OuLevy:
            s.drift = DriftTag::LinearOverAlpha;
            s.diffusion = DiffusionTag::Zero;
            s.levy_sigma = 1.0;
            s.horizon = 0.5;
            s.initial = InitialDistribution::anisotropic(d, seed);
            break;
        case Benchmark::TanhDrift:
            s.drift = DriftTag::TanhRadial;
            s.diffusion = DiffusionTag::Zero;
            s.levy_sigma = 1.0;
            s.horizon = 0.3;
            s.initial = InitialDistribution::unit_gaussian(d);
            break;
        case Benchmark::Polynomial:
            s.drift = DriftTag::Polynomial;
            s.diffusion = DiffusionTag::Zero;
            s.levy_sigma = 1.0;
            s.horizon = 0.3;
            s.initial = InitialDistribution::unit_gaussian(d);
            break;
        case Benchmark::Heat1d:
            s.drift = DriftTag::Zero;
            s.diffusion = DiffusionTag::Identity;
            s.levy_sigma = 0.0;
            s.levy_alpha = 2.0;
            s.horizon = 1.0;
            s.initial = InitialDistribution::unit_gaussian(d);
            break;
    }
    if (initial) {
        switch (*initial) {
            case InitialKind::AnisotropicGaussian:
                s.initial = InitialDistribution::anisotropic(d, seed);
                break;
            case InitialKind::UnitGaussian:
                s.initial = InitialDistribution::unit_gaussian(d);
                break;
            case InitialKind::UnitLaplacian:
                s.initial = InitialDistribution::unit_laplacian(d);
                break;
            case InitialKind::GaussLaplaceMixture:
                s.initial = InitialDistribution::mixture(d);
                break;
            case InitialKind::PointMassZero:
                s.initial = InitialDistribution::point_mass_zero(d);
                break;
        }
    }
    return s;
}

bool benchmark_has_exact_marginal(Benchmark b) {
    return b == Benchmark::PureLevy || b == Benchmark::Basic ||
           b == Benchmark::Complicated || b == Benchmark::OuLevy ||
           b == Benchmark::Heat1d;
}

Mat brownian_integral_cov(const Mat& B, double t) {
    const int d = B.rows;
    Mat c = matmul_nt(B, B);
    for (auto& v : c.a) v *= t;
    const double h = 0.5 * t * t;
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) c(i, j) += h * (B(i, j) + B(j, i));
    const double z = t * t * t / 3.0;
    for (int i = 0; i < d; ++i) c(i, i) += z;
    return c;
}

namespace {
Mat sym_sqrt_clamped(const Mat& S, const char* what) {
    Mat Q;
    std::vector<double> w;
    eig_sym(S, Q, w);
    for (double& v : w) {
        if (v < -1e-12)
            throw NumericError(std::string(what) + ": negative eigenvalue " +
                               std::to_string(v));
        if (v < 0.0) v = 0.0;
    }
    Mat qs = Q;
    for (int i = 0; i < S.rows; ++i)
        for (int j = 0; j < S.cols; ++j) qs(i, j) *= std::sqrt(w[(std::size_t)j]);
    return matmul_nt(qs, Q);
}
} // namespace

void sigma_t_matrix(const Mat& B, double t, Mat& sigma, Mat& sqrt_sigma) {
    if (t < 0.0) throw ConfigError("sigma_t_matrix: t must be >= 0");
    const int d = B.rows;
    sigma = brownian_integral_cov(B, t);
    for (int i = 0; i < d; ++i) sigma(i, i) += 1.0;
    sqrt_sigma = sym_sqrt_clamped(sigma, "sigma_t_matrix");
}

Mat make_b_matrix(int d, std::uint64_t seed) {
    Rng rng(seed, 0x624d4154);
    Mat gauss(d, d);
    for (auto& v : gauss.a) v = rng.gauss();
    Mat Q;
    qr_orthonormal(gauss, Q);
    const auto lam = lambda_pattern(d, seed ^ 0x47414d4d41ull);
    Mat B(d, d);
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) B(i, j) = Q(i, j) * lam[(std::size_t)j];
    return B;
}

MarginalParts exact_marginal_parts(Benchmark b, const SdeSpec& spec, double t,
                                   long n, std::uint64_t seed,
                                   std::uint64_t stream) {
    if (!benchmark_has_exact_marginal(b))
        throw CapabilityError("exact_marginal: no closed form for benchmark " +
                              benchmark_name(b) + "; use simulate");
    if (t < 0.0 || t > spec.horizon + 1e-12)
        throw ConfigError("exact_marginal: t outside [0, T]");
    const int d = spec.d;
    MarginalParts parts;
    parts.shift = Mat((int)n, d);
    parts.gaussian = Mat((int)n, d);
    parts.levy = Mat((int)n, d);

    Mat cov_sqrt;
    if (b == Benchmark::Complicated && t > 0.0)
        cov_sqrt = sym_sqrt_clamped(brownian_integral_cov(spec.B, t), "exact_marginal");

    double gamma_t = 0.0;
    if (spec.has_levy() && t > 0.0) {
        const double base = b == Benchmark::OuLevy
                                ? std::pow(1.0 - std::exp(-t), 1.0 / spec.levy_alpha)
                                : std::pow(t, 1.0 / spec.levy_alpha);
        gamma_t = spec.levy_sigma * base;
    }
    parts.gamma_t = gamma_t;
    const double shift_coef =
        b == Benchmark::OuLevy ? std::exp(-t / spec.levy_alpha) : 1.0;

    const bool par = kernels::mode() == kernels::Mode::Parallel;
#pragma omp parallel for schedule(static) if (par && n > 1024)
    for (long i = 0; i < n; ++i) {
        Rng rng(seed, stream ^ 0x6d617267);
        rng.set_block((std::uint64_t)i);
        double* sh = parts.shift.row((int)i);
        double* ga = parts.gaussian.row((int)i);
        double* le = parts.levy.row((int)i);
        spec.initial.sample(rng, sh);
        for (int c = 0; c < d; ++c) sh[c] *= shift_coef;
        if (t > 0.0) {
            switch (b) {
                case Benchmark::Basic:
                case Benchmark::Heat1d: {
                    const double s = std::sqrt(t);
                    for (int c = 0; c < d; ++c) ga[c] = s * rng.gauss();
                    break;
                }
                case Benchmark::Complicated: {
                    std::vector<double> z((std::size_t)d);
                    for (int c = 0; c < d; ++c) z[(std::size_t)c] = rng.gauss();
                    for (int r = 0; r < d; ++r) {
                        double s = 0.0;
                        for (int c = 0; c < d; ++c) s += cov_sqrt(r, c) * z[(std::size_t)c];
                        ga[r] = s;
                    }
                    break;
                }
                default: break;
            }
            if (gamma_t > 0.0) {
                const StableLaw law(spec.levy_alpha, gamma_t);
                draw_isotropic_stable(law, d, rng, le);
            }
        }
    }
    return parts;
}

SampleBatch exact_marginal(Benchmark b, const SdeSpec& spec, double t, long n,
                           std::uint64_t seed) {
    const auto parts = exact_marginal_parts(b, spec, t, n, seed);
    SampleBatch batch;
    batch.t = t;
    batch.seed = seed;
    batch.provenance = "exact:" + benchmark_name(b);
    batch.points = Mat((int)n, spec.d);
    for (std::size_t i = 0; i < batch.points.size(); ++i)
        batch.points.a[i] = parts.shift.a[i] + parts.gaussian.a[i] + parts.levy.a[i];
    return batch;
}

void write_batch_dump(const std::string& path, const std::string& benchmark,
                      const SdeSpec& spec, const std::string& scheme,
                      const TimeGrid& grid, std::uint64_t seed,
                      const std::vector<SampleBatch>& batches) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw NumericError("write_batch_dump: cannot open " + path);
    f << "# benchmark=" << benchmark << " d=" << spec.d << " alpha=" << spec.levy_alpha
      << " seed=" << seed << " scheme=" << scheme << " grid_steps=" << grid.steps()
      << " horizon=" << grid.t.back() << "\n";
    f << "# columns: trajectory time_index x1..xd\n";
    char buf[40];
    for (std::size_t s = 0; s < batches.size(); ++s) {
        const Mat& p = batches[s].points;
        for (int i = 0; i < p.rows; ++i) {
            f << i << ' ' << s;
            for (int c = 0; c < p.cols; ++c) {
                std::snprintf(buf, sizeof buf, " %.17g", p(i, c));
                f << buf;
            }
            f << '\n';
        }
    }
    if (!f) throw NumericError("write_batch_dump: write failed " + path);
}

std::vector<SampleBatch> read_batch_dump(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw NumericError("read_batch_dump: cannot open " + path);
    std::string line;
    std::vector<std::vector<std::vector<double>>> rows; // [batch][traj][coord]
    while (std::getline(f, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream is(line);
        long traj = 0, tidx = 0;
        is >> traj >> tidx;
        std::vector<double> x;
        double v;
        while (is >> v) x.push_back(v);
        if ((std::size_t)tidx >= rows.size()) rows.resize((std::size_t)tidx + 1);
        auto& batch = rows[(std::size_t)tidx];
        if ((std::size_t)traj >= batch.size()) batch.resize((std::size_t)traj + 1);
        batch[(std::size_t)traj] = std::move(x);
    }
    std::vector<SampleBatch> out(rows.size());
    for (std::size_t s = 0; s < rows.size(); ++s) {
        const long n = (long)rows[s].size();
        const int d = n ? (int)rows[s][0].size() : 0;
        out[s].points = Mat((int)n, d);
        for (long i = 0; i < n; ++i)
            for (int c = 0; c < d; ++c)
                out[s].points((int)i, c) = rows[s][(std::size_t)i][(std::size_t)c];
    }
    return out;
}

} // namespace fsde
