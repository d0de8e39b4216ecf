#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>

#include "fsde/llsolver.hpp"
#include "helpers.hpp"

using namespace fsde;

namespace {
constexpr double LOG_2PI = 1.83787706640934548356065947281123527;
}

TEST_CASE("a_alpha: catalog cases and finite-difference cross-check") {
    // f = 0, G = 0, sigma = 0 -> A = 0
    SdeSpec zero;
    zero.d = 2;
    zero.levy_sigma = 0.0;
    Mat X(4, 3);
    Rng rng(3, 0);
    for (auto& v : X.a) v = rng.gauss();
    std::vector<double> divA;
    Mat A = a_alpha_values(zero, nullptr, X, &divA);
    for (double v : A.a) CHECK(v == 0.0);
    for (double v : divA) CHECK(v == 0.0);

    // f = -x, G = I (constant), sigma = 0 -> A = -x (divergence term vanishes)
    SdeSpec lin;
    lin.d = 2;
    lin.drift = DriftTag::Linear;
    lin.diffusion = DiffusionTag::Identity;
    lin.levy_sigma = 0.0;
    A = a_alpha_values(lin, nullptr, X, &divA);
    for (int i = 0; i < 4; ++i) {
        CHECK(A(i, 0) == doctest::Approx(-X(i, 0)));
        CHECK(A(i, 1) == doctest::Approx(-X(i, 1)));
        CHECK(divA[(std::size_t)i] == doctest::Approx(-2.0));
    }

    // ou with the analytic large-t stand-in S = -x/(alpha (1 - e^{-t})):
    // A = -x/alpha + x/(alpha (1 - e^{-t})), term-by-term FD check of div A
    const int d = 2;
    SdeSpec ou = make_benchmark(Benchmark::OuLevy, d, 1.95, 5);
    const double alpha = ou.levy_alpha;
    const AnalyticLinearScore surrogate(
        d,
        [&](double t) {
            Mat m(d, d);
            for (int i = 0; i < d; ++i) m(i, i) = 1.0 / (alpha * (1.0 - std::exp(-t)));
            return m;
        },
        [&](double t) {
            Mat m(d, d);
            const double e = std::exp(-t);
            const double den = alpha * (1.0 - e) * (1.0 - e);
            for (int i = 0; i < d; ++i) m(i, i) = -e / den;
            return m;
        });
    Mat Xou(6, d + 1);
    for (int i = 0; i < 6; ++i) {
        Xou(i, 0) = rng.gauss();
        Xou(i, 1) = rng.gauss();
        Xou(i, 2) = 1.5 + 0.2 * i;
    }
    std::vector<double> divAou;
    const Mat Aou = a_alpha(ou, surrogate, Xou, &divAou);
    for (int i = 0; i < 6; ++i) {
        const double t = Xou(i, 2);
        for (int c = 0; c < d; ++c) {
            const double want =
                -Xou(i, c) / alpha + Xou(i, c) / (alpha * (1.0 - std::exp(-t)));
            CHECK(Aou(i, c) == doctest::Approx(want).epsilon(1e-12));
        }
        // FD of A columns vs div A
        const double h = 1e-6;
        double fd = 0.0;
        for (int c = 0; c < d; ++c) {
            Mat xp = Xou, xm = Xou;
            xp(i, c) += h;
            xm(i, c) -= h;
            const Mat ap = a_alpha(ou, surrogate, xp);
            const Mat am = a_alpha(ou, surrogate, xm);
            fd += (ap(i, c) - am(i, c)) / (2.0 * h);
        }
        CHECK(divAou[(std::size_t)i] == doctest::Approx(fd).epsilon(1e-6));
    }
}

TEST_CASE("ll-pde residual: Brownian heat kernel is an exact solution") {
    // dx = dw, d = 1, p0 = N(0,1): q = -1/2 log(2 pi (1+t)) - x^2/(2(1+t))
    SdeSpec heat = make_benchmark(Benchmark::Heat1d, 1, 2.0, 1);
    const AnalyticGaussianLl q(
        1, [](double t) { return Mat(1, 1, {1.0 + t}); },
        [](double) { return Mat(1, 1, {1.0}); });
    Mat X(100, 2);
    Rng rng(9, 0);
    for (int i = 0; i < 100; ++i) {
        X(i, 0) = 2.0 * rng.gauss();
        X(i, 1) = rng.uniform();
    }
    const auto res = ll_pde_residual(q, heat, X);
    double worst = 0.0;
    for (double v : res) worst = std::max(worst, std::fabs(v));
    INFO("max |residual| = ", worst);
    CHECK(worst < 1e-8);
}

TEST_CASE("ll-pde residual: all-zero spec with constant q") {
    SdeSpec zero;
    zero.d = 2;
    zero.levy_sigma = 0.0;
    Mlp flat = make_mlp({3, 4, 1}, 2);
    for (auto& w : flat.W) w.fill(0.0);
    for (auto& b : flat.b) b.fill(0.0);
    flat.b[1](0, 0) = -3.7; // q == -3.7 everywhere
    const MlpScalarField q(flat);
    Mat X(10, 3);
    Rng rng(4, 0);
    for (auto& v : X.a) v = rng.gauss();
    const auto res = ll_pde_residual(q, zero, X);
    for (double v : res) CHECK(v == doctest::Approx(0.0).scale(1.0).epsilon(1e-14));
}

TEST_CASE("ll-pde residual: alpha=2 pure Levy with analytic score and LL") {
    // dx = dL with alpha = 2 is Brownian with variance 2t: N(0, (1+2t) I)
    const int d = 1;
    SdeSpec s = make_benchmark(Benchmark::PureLevy, d, 2.0, 3);
    auto Cm = [](double t) { return Mat(1, 1, {1.0 + 2.0 * t}); };
    const AnalyticGaussianLl q(d, Cm, [](double) { return Mat(1, 1, {2.0}); });
    const AnalyticLinearScore score(
        d, [&](double t) { return Mat(1, 1, {1.0 / (1.0 + 2.0 * t)}); },
        [&](double t) {
            const double c = 1.0 + 2.0 * t;
            return Mat(1, 1, {-2.0 / (c * c)});
        });
    Mat X(100, 2);
    Rng rng(8, 0);
    for (int i = 0; i < 100; ++i) {
        X(i, 0) = 2.0 * rng.gauss();
        X(i, 1) = 0.05 + 0.9 * rng.uniform();
    }
    const auto res = ll_pde_residual(q, score, s, X);
    double worst = 0.0;
    for (double v : res) worst = std::max(worst, std::fabs(v));
    INFO("max |residual| = ", worst);
    CHECK(worst < 1e-6);
}

TEST_CASE("alpha=2 reduction: score-fpde equals the gradient of the LL residual") {
    // with S^(alpha) := S^(2) := grad q, the Score-fPDE residual is the exact
    // spatial gradient of the Brownian-only LL-PDE residual
    const int d = 2;
    SdeSpec s;
    s.d = d;
    s.drift = DriftTag::Linear;
    s.diffusion = DiffusionTag::Identity;
    s.levy_sigma = 1.0;
    s.levy_alpha = 2.0;
    s.initial = InitialDistribution::unit_gaussian(d);
    s.horizon = 1.0;

    // a non-solution Gaussian field: C(t) deliberately wrong
    auto Cm = [](double t) {
        Mat c(2, 2);
        c(0, 0) = 1.0 + 0.5 * t;
        c(1, 1) = 2.0 - 0.3 * t;
        c(0, 1) = c(1, 0) = 0.2 * t;
        return c;
    };
    auto dCm = [](double) {
        Mat c(2, 2);
        c(0, 0) = 0.5;
        c(1, 1) = -0.3;
        c(0, 1) = c(1, 0) = 0.2;
        return c;
    };
    const AnalyticGaussianLl q(d, Cm, dCm);
    const AnalyticLinearScore score(
        d, [&](double t) { return inverse(Cm(t)); },
        [&](double t) {
            // d/dt C^{-1} = -C^{-1} dC C^{-1}
            const Mat ci = inverse(Cm(t));
            const Mat m = matmul(matmul(ci, dCm(t)), ci);
            Mat out(2, 2);
            for (std::size_t i = 0; i < m.size(); ++i) out.a[i] = -m.a[i];
            return out;
        });

    Mat X(5, d + 1);
    Rng rng(21, 0);
    for (int i = 0; i < 5; ++i) {
        X(i, 0) = rng.gauss();
        X(i, 1) = rng.gauss();
        X(i, 2) = 0.2 + 0.6 * rng.uniform();
    }
    const Mat fpde = score_fpde_residual(score, score, s, X);

    // Richardson-extrapolated central differences of the LL residual
    const double h = 1e-4;
    for (int i = 0; i < 5; ++i) {
        for (int c = 0; c < d; ++c) {
            auto res_at = [&](double delta) {
                Mat xp = X;
                xp(i, c) += delta;
                return ll_pde_residual(q, score, s, xp)[(std::size_t)i];
            };
            const double d1 = (res_at(h) - res_at(-h)) / (2.0 * h);
            const double d2 = (res_at(h / 2) - res_at(-h / 2)) / h;
            const double fd = (4.0 * d2 - d1) / 3.0;
            CHECK(fpde(i, c) == doctest::Approx(fd).epsilon(1e-8).scale(1e-4));
        }
    }
}

TEST_CASE("hard constraint: exact at t=0, unit-Gaussian value at the origin") {
    const int d = 3;
    const auto init = InitialDistribution::anisotropic(d, 11);
    LlModel m = make_ll_model(init, {16, 16}, 7, true);

    Rng rng(13, 0);
    double worst = 0.0;
    std::vector<double> x((std::size_t)d);
    for (int trial = 0; trial < 10000; ++trial) {
        for (auto& v : x) v = 3.0 * rng.gauss();
        const double q0 = evaluate_ll(m, x.data(), d, 0.0);
        worst = std::max(worst, std::fabs(q0 - init.log_density(x.data())));
    }
    CHECK(worst == 0.0);

    LlModel ug = make_ll_model(InitialDistribution::unit_gaussian(d), {8}, 3, true);
    std::vector<double> origin((std::size_t)d, 0.0);
    CHECK(evaluate_ll(ug, origin.data(), d, 0.0) ==
          doctest::Approx(-0.5 * d * LOG_2PI).epsilon(1e-14));

    // hard mode rejects initial laws without a smooth closed form
    CHECK_THROWS_AS(
        make_ll_model(InitialDistribution::unit_laplacian(d), {8}, 3, true),
        ConfigError);
}

TEST_CASE("residual linearization in grad-q perturbations matches FD") {
    const int d = 2;
    SdeSpec s = make_benchmark(Benchmark::Basic, d, 1.9, 17);
    const Mlp sa = make_mlp({d + 1, 8, 8, d}, 19);
    const MlpVectorField saf(sa);

    Mlp qnet = make_mlp({d + 1, 10, 10, 1}, 23);
    Mlp dir = make_mlp(qnet.sizes, 29);
    Mat X(6, d + 1);
    Rng rng(31, 0);
    for (int i = 0; i < 6; ++i) {
        X(i, 0) = rng.gauss();
        X(i, 1) = rng.gauss();
        X(i, 2) = 0.1 + 0.8 * rng.uniform();
    }
    auto res_at = [&](double eps) {
        Mlp p = qnet;
        for (int l = 0; l < p.n_layers(); ++l) {
            for (std::size_t i = 0; i < p.W[(std::size_t)l].size(); ++i)
                p.W[(std::size_t)l].a[i] += eps * dir.W[(std::size_t)l].a[i];
            for (std::size_t i = 0; i < p.b[(std::size_t)l].size(); ++i)
                p.b[(std::size_t)l].a[i] += eps * dir.b[(std::size_t)l].a[i];
        }
        const MlpScalarField qf(p);
        return ll_pde_residual(qf, saf, s, X);
    };
    // Richardson-extrapolated central differences at two base steps: each is
    // O(eps^4) accurate, so agreement probes the derivative itself
    auto richardson = [&](double e) {
        const auto pa = res_at(e), ma = res_at(-e);
        const auto pb = res_at(e / 2), mb = res_at(-e / 2);
        std::vector<double> out(pa.size());
        for (std::size_t i = 0; i < pa.size(); ++i) {
            const double d1 = (pa[i] - ma[i]) / (2.0 * e);
            const double d2 = (pb[i] - mb[i]) / e;
            out[i] = (4.0 * d2 - d1) / 3.0;
        }
        return out;
    };
    const auto r1 = richardson(2e-3);
    const auto r2 = richardson(1e-3);
    for (std::size_t i = 0; i < r1.size(); ++i)
        CHECK(r1[i] == doctest::Approx(r2[i]).epsilon(1e-6).scale(1e-6));
}

TEST_CASE("train_ll: heat toy smoke run, monotone best-so-far, soft mode") {
    SdeSpec heat = make_benchmark(Benchmark::Heat1d, 1, 2.0, 1);
    const ExactMarginalSampler sampler(Benchmark::Heat1d, heat, 1e-2,
                                       TimeSampling::Continuous);
    LlModel model = make_ll_model(heat.initial, {16, 16}, 3, true);
    TrainPlan plan;
    plan.epochs = 1200;
    plan.batch_size = 128;
    plan.seed = 5;
    const auto log = train_ll(model, nullptr, heat, plan, sampler);
    REQUIRE(log.log.size() > 5);
    CHECK(log.aborted_epoch == -1);
    // best-so-far loss is non-increasing over checkpoints
    double best = std::numeric_limits<double>::infinity();
    std::vector<double> bests;
    for (const auto& row : log.log) {
        best = std::min(best, row.loss);
        bests.push_back(best);
    }
    for (std::size_t i = 1; i < bests.size(); ++i) CHECK(bests[i] <= bests[i - 1]);
    CHECK(log.log.back().loss < 0.2 * log.log.front().loss);

    // soft mode with Laplacian initial: default weight 20, initial mismatch shrinks
    SdeSpec lap = make_benchmark(Benchmark::Heat1d, 1, 2.0, 1,
                                 InitialKind::UnitLaplacian);
    const ExactMarginalSampler lsampler(Benchmark::Heat1d, lap, 1e-2,
                                        TimeSampling::Continuous);
    LlModel soft = make_ll_model(lap.initial, {16, 16}, 9, false);
    TrainPlan splan;
    splan.epochs = 1500;
    splan.batch_size = 128;
    splan.seed = 6;
    CHECK(splan.lambda_initial == 20.0);
    const auto slog = train_ll(soft, nullptr, lap, splan, lsampler);
    CHECK(slog.aborted_epoch == -1);
    // q(., 0) approaches log p0 on typical points
    Rng rng(10, 0);
    double err = 0.0;
    int cnt = 0;
    for (int i = 0; i < 100; ++i) {
        const double x = rng.gauss();
        const double got = evaluate_ll(soft, &x, 1, 0.0);
        err += std::fabs(got - lap.initial.log_density(&x));
        ++cnt;
    }
    CHECK(err / cnt < 0.35);
}

TEST_CASE("evaluate_ll pdf values stay in log space until the end") {
    const int d = 10;
    LlModel m = make_ll_model(InitialDistribution::unit_gaussian(d), {8}, 3, true);
    std::vector<double> x((std::size_t)d, 0.5);
    const double ll = evaluate_ll(m, x.data(), d, 0.0);
    CHECK(std::isfinite(ll));
    CHECK(std::exp(ll) > 0.0);
}
