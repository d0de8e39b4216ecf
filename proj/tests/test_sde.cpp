#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <cstring>

#include "fsde/kernels.hpp"
#include "fsde/sde.hpp"
#include "fsde/stats.hpp"
#include "helpers.hpp"

using namespace fsde;

TEST_CASE("initial distributions: moments, pattern, densities") {
    // unit Gaussian d=2: empirical covariance ~ I
    const auto init = InitialDistribution::unit_gaussian(2);
    Rng rng(3, 0);
    double c00 = 0, c11 = 0, c01 = 0;
    const int n = 200000;
    double x[2];
    for (int i = 0; i < n; ++i) {
        init.sample(rng, x);
        c00 += x[0] * x[0];
        c11 += x[1] * x[1];
        c01 += x[0] * x[1];
    }
    CHECK(c00 / n == doctest::Approx(1.0).epsilon(0.02));
    CHECK(c11 / n == doctest::Approx(1.0).epsilon(0.02));
    CHECK(c01 / n == doctest::Approx(0.0).scale(1.0).epsilon(0.02));

    // anisotropic pattern: lambda_{2i} * lambda_{2i+1} == 1 exactly
    const auto aniso = InitialDistribution::anisotropic(9, 42);
    for (int i = 0; i + 1 < 9; i += 2) {
        CHECK(aniso.lambdas[(std::size_t)i] >= 1.0);
        CHECK(aniso.lambdas[(std::size_t)i] <= 2.0);
        CHECK(aniso.lambdas[(std::size_t)i] * aniso.lambdas[(std::size_t)i + 1] == 1.0);
    }

    // unit Laplacian d=1: log density at 0 is log(1/2)
    const auto lap = InitialDistribution::unit_laplacian(1);
    double zero = 0.0;
    CHECK(lap.log_density(&zero) == doctest::Approx(std::log(0.5)));

    // mixture density sits between the components
    const auto mix = InitialDistribution::mixture(1);
    const auto ug = InitialDistribution::unit_gaussian(1);
    for (double xv : {0.0, 0.7, 2.0}) {
        const double lm = mix.log_density(&xv);
        const double lo = std::min(ug.log_density(&xv), lap.log_density(&xv));
        const double hi = std::max(ug.log_density(&xv), lap.log_density(&xv));
        CHECK(lm >= lo - 1e-12);
        CHECK(lm <= hi + 1e-12);
    }

    const auto pm = InitialDistribution::point_mass_zero(2);
    double y[2] = {0.1, 0.2};
    CHECK_THROWS_AS(pm.log_density(y), CapabilityError);
    CHECK_THROWS_AS(pm.score(y), CapabilityError);
}

TEST_CASE("forward step: degenerate and linear cases") {
    SdeSpec s;
    s.d = 1;
    s.drift = DriftTag::Zero;
    s.diffusion = DiffusionTag::Zero;
    s.levy_sigma = 0.0;
    Rng rng(5, 0);
    double x = 1.7, out = 0;
    forward_em_step(s, &x, 0.0, 0.1, rng, &out);
    CHECK(out == 1.7);

    s.drift = DriftTag::Linear;
    x = 1.0;
    forward_em_step(s, &x, 0.0, 0.1, rng, &out);
    CHECK(out == doctest::Approx(0.9));

    CHECK_THROWS_AS(forward_em_step(s, &x, 0.0, 0.0, rng, &out), ConfigError);
}

TEST_CASE("pure Levy EM marginal matches the exact stable law") {
    SdeSpec s = make_benchmark(Benchmark::PureLevy, 1, 1.95, 7,
                               InitialKind::PointMassZero);
    const TimeGrid grid = TimeGrid::uniform(1.0, 1000);
    std::vector<long> record{1000};
    const auto batches = simulate(s, Scheme::Forward, grid, 20000, 11, &record);
    const Mat& sim = batches[0].points;
    // empirical characteristic function against exp(-|k|^alpha)
    for (double k : {0.5, 1.0, 1.5}) {
        double sm = 0, s2 = 0;
        for (int i = 0; i < sim.rows; ++i) {
            const double c = std::cos(k * sim(i, 0));
            sm += c;
            s2 += c * c;
        }
        const double mean = sm / sim.rows;
        const double se = std::sqrt((s2 / sim.rows - mean * mean) / sim.rows);
        const double exact = std::exp(-std::pow(k, 1.95));
        CHECK(std::fabs(mean - exact) < 3.0 * se + 1e-4);
    }
}

TEST_CASE("implicit step: linear closed form with shared noise draws") {
    SdeSpec s;
    s.d = 1;
    s.drift = DriftTag::Linear;
    s.diffusion = DiffusionTag::Zero;
    s.levy_sigma = 1.0;
    s.levy_alpha = 1.8;
    const double dt = 0.25;
    for (int trial = 0; trial < 30; ++trial) {
        const double x = 0.5 * trial - 7.0;
        Rng r1(99, (std::uint64_t)trial);
        Rng r2(99, (std::uint64_t)trial);
        double fwd = 0, imp = 0;
        forward_em_step(s, &x, 0.0, dt, r1, &fwd);
        implicit_em_step(s, &x, 0.0, dt, r2, {}, &imp);
        // same draws: noise = fwd - x + x dt; closed form y = (x + noise)/(1 + dt)
        const double noise = fwd - x + x * dt;
        CHECK(imp == doctest::Approx((x + noise) / (1.0 + dt)).epsilon(1e-12));
    }
}

TEST_CASE("implicit step: dt -> 0 approaches x + noise, unconditional stability") {
    SdeSpec s;
    s.d = 1;
    s.drift = DriftTag::Linear;
    s.diffusion = DiffusionTag::Zero;
    s.levy_sigma = 0.0;
    double x = 3.0, out = 0;
    Rng rng(1, 0);
    for (double dt : {1e-2, 1e-4, 1e-6}) {
        implicit_em_step(s, &x, 0.0, dt, rng, {}, &out);
        CHECK(std::fabs(out - x) <= dt * std::fabs(x) * 1.01);
    }
    // |x'| < |x| for any dt with zero noise
    for (double dt : {0.5, 1.0, 10.0, 1000.0}) {
        implicit_em_step(s, &x, 0.0, dt, rng, {}, &out);
        CHECK(std::fabs(out) < std::fabs(x));
    }
}

TEST_CASE("implicit vs forward difference shrinks with dt (polynomial drift)") {
    SdeSpec s;
    s.d = 1;
    s.drift = DriftTag::Polynomial;
    s.diffusion = DiffusionTag::Zero;
    s.levy_sigma = 1.0;
    s.levy_alpha = 1.9;
    const double x = 0.8;
    double prev_diff = -1.0;
    for (double dt : {4e-3, 2e-3, 1e-3}) {
        double acc = 0.0;
        for (int trial = 0; trial < 200; ++trial) {
            Rng r1(7, (std::uint64_t)trial);
            Rng r2(7, (std::uint64_t)trial);
            double fwd = 0, imp = 0;
            forward_em_step(s, &x, 0.0, dt, r1, &fwd);
            implicit_em_step(s, &x, 0.0, dt, r2, {}, &imp);
            acc += std::fabs(imp - fwd);
        }
        if (prev_diff > 0.0) CHECK(acc < prev_diff * 0.75);
        prev_diff = acc;
    }
}

TEST_CASE("simulate: one step equals one forward step; zero-noise ODE decays") {
    SdeSpec s = make_benchmark(Benchmark::PureLevy, 2, 1.9, 3);
    const TimeGrid g1 = TimeGrid::uniform(0.3, 1);
    const auto b = simulate(s, Scheme::Forward, g1, 5, 77);
    for (long traj = 0; traj < 5; ++traj) {
        Rng rng(77, (std::uint64_t)traj + 1);
        double x0[2], x1[2];
        s.initial.sample(rng, x0);
        forward_em_step(s, x0, 0.0, 0.3, rng, x1);
        CHECK(b[0].points((int)traj, 0) == x0[0]);
        CHECK(b[1].points((int)traj, 0) == x1[0]);
        CHECK(b[1].points((int)traj, 1) == x1[1]);
    }

    SdeSpec ode;
    ode.d = 1;
    ode.drift = DriftTag::Linear;
    ode.diffusion = DiffusionTag::Zero;
    ode.levy_sigma = 0.0;
    ode.initial = InitialDistribution::unit_gaussian(1);
    const TimeGrid grid = TimeGrid::uniform(1.0, 2000);
    std::vector<long> rec{0, 2000};
    const auto batches = simulate(ode, Scheme::Forward, grid, 50, 5, &rec);
    for (int i = 0; i < 50; ++i) {
        const double want = std::exp(-1.0) * batches[0].points(i, 0);
        CHECK(batches[1].points(i, 0) == doctest::Approx(want).epsilon(2e-3).scale(0.01));
    }
}

TEST_CASE("sigma_t matrix: closed forms and reconstruction") {
    Mat zero(3, 3);
    Mat sigma, root;
    sigma_t_matrix(zero, 1.0, sigma, root);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            CHECK(sigma(i, j) == doctest::Approx(i == j ? 4.0 / 3.0 : 0.0).scale(1.0).epsilon(1e-12));
            CHECK(root(i, j) == doctest::Approx(i == j ? 2.0 / std::sqrt(3.0) : 0.0).scale(1.0).epsilon(1e-12));
        }

    sigma_t_matrix(identity(3), 1.0, sigma, root);
    for (int i = 0; i < 3; ++i)
        CHECK(sigma(i, i) == doctest::Approx(10.0 / 3.0).epsilon(1e-12));

    // t = 0 reduces to the identity exactly
    const Mat B = make_b_matrix(4, 9);
    sigma_t_matrix(B, 0.0, sigma, root);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j)
            CHECK(sigma(i, j) == doctest::Approx(i == j ? 1.0 : 0.0).scale(1.0).epsilon(1e-14));

    // random B: sqrt reconstructs Sigma_t to 1e-12 relative
    sigma_t_matrix(B, 0.7, sigma, root);
    const Mat rec = matmul_nt(root, root);
    double num = 0, den = 0;
    for (std::size_t i = 0; i < sigma.size(); ++i) {
        num += (rec.a[i] - sigma.a[i]) * (rec.a[i] - sigma.a[i]);
        den += sigma.a[i] * sigma.a[i];
    }
    CHECK(std::sqrt(num / den) < 1e-12);
}

TEST_CASE("exact marginals: ou late-time behavior and basic alpha=2 covariance") {
    // at t = 20 the initial coefficient is < 1e-4 and the law is ~ SaS(1)
    SdeSpec ou = make_benchmark(Benchmark::OuLevy, 2, 1.95, 4);
    ou.horizon = 20.0;
    CHECK(std::exp(-20.0 / 1.95) < 1e-4);
    const auto parts = exact_marginal_parts(Benchmark::OuLevy, ou, 20.0, 50000, 8);
    double shift_max = 0.0;
    for (double v : parts.shift.a) shift_max = std::max(shift_max, std::fabs(v));
    CHECK(shift_max < 1e-3); // |x0| bounded by a few, scaled by < 1e-4
    CHECK(parts.gamma_t == doctest::Approx(std::pow(1.0 - std::exp(-20.0), 1.0 / 1.95)));

    // basic with alpha = 2: total covariance Sigma + t I + 2 t I
    SdeSpec basic = make_benchmark(Benchmark::Basic, 2, 2.0, 21);
    const double t = 0.7;
    const auto batch = exact_marginal(Benchmark::Basic, basic, t, 400000, 13);
    for (int c = 0; c < 2; ++c) {
        double m2 = 0.0;
        for (int i = 0; i < batch.points.rows; ++i) m2 += batch.points(i, c) * batch.points(i, c);
        m2 /= batch.points.rows;
        const double want = basic.initial.lambdas[(std::size_t)c] + t + 2.0 * t;
        CHECK(m2 == doctest::Approx(want).epsilon(0.03));
    }
}

TEST_CASE("exact vs simulated: two-sample KS on random projections" * doctest::timeout(1200)) {
    struct Case {
        Benchmark b;
        int d;
        double T;
    };
    const Case cases[] = {{Benchmark::OuLevy, 3, 0.5},
                          {Benchmark::Basic, 3, 1.0},
                          {Benchmark::Complicated, 3, 1.0}};
    const long n = 100000;
    for (const auto& c : cases) {
        SdeSpec spec = make_benchmark(c.b, c.d, 1.95, 31);
        const long steps = (long)std::llround(c.T / 1e-3);
        const TimeGrid grid = TimeGrid::uniform(c.T, steps);
        std::vector<long> rec{steps};
        const auto sim = simulate(spec, Scheme::Forward, grid, n, 17, &rec);
        const auto exact = exact_marginal(c.b, spec, c.T, n, 18);
        Rng dir_rng(23, 5);
        for (int proj = 0; proj < 3; ++proj) {
            std::vector<double> dir((std::size_t)c.d);
            double nrm = 0.0;
            for (auto& v : dir) {
                v = dir_rng.gauss();
                nrm += v * v;
            }
            nrm = std::sqrt(nrm);
            std::vector<double> a((std::size_t)n), b2((std::size_t)n);
            for (long i = 0; i < n; ++i) {
                double sa = 0, sb = 0;
                for (int k = 0; k < c.d; ++k) {
                    sa += dir[(std::size_t)k] * sim[0].points((int)i, k);
                    sb += dir[(std::size_t)k] * exact.points((int)i, k);
                }
                a[(std::size_t)i] = sa / nrm;
                b2[(std::size_t)i] = sb / nrm;
            }
            const auto ks = two_sample_ks(std::move(a), std::move(b2));
            INFO("benchmark ", benchmark_name(c.b), " projection ", proj, " D=", ks.d);
            CHECK(ks.pvalue > 0.01);
        }
    }
}

TEST_CASE("EM terminal error decreases with step size (1D OU-Levy)") {
    SdeSpec ou = make_benchmark(Benchmark::OuLevy, 1, 1.5, 2);
    ou.horizon = 1.0;
    const long n = 200000;
    const auto exact = exact_marginal(Benchmark::OuLevy, ou, 1.0, n, 3);
    std::vector<double> ex(exact.points.a);
    double w_coarse = 0, w_fine = 0;
    for (double eta : {0.1, 0.02}) {
        const long steps = (long)std::llround(1.0 / eta);
        const TimeGrid grid = TimeGrid::uniform(1.0, steps);
        std::vector<long> rec{steps};
        const auto sim = simulate(ou, Scheme::Forward, grid, n, 29, &rec);
        const double w = wasserstein1(std::vector<double>(sim[0].points.a), ex);
        if (eta == 0.1) w_coarse = w;
        else w_fine = w;
    }
    CHECK(w_fine < w_coarse);
}

TEST_CASE("simulate is bit-reproducible and mode-independent") {
    SdeSpec s = make_benchmark(Benchmark::Basic, 3, 1.85, 6);
    const TimeGrid grid = TimeGrid::uniform(0.2, 20);
    const auto a = simulate(s, Scheme::Forward, grid, 500, 44);
    const auto b = simulate(s, Scheme::Forward, grid, 500, 44);
    REQUIRE(a.size() == b.size());
    for (std::size_t k = 0; k < a.size(); ++k)
        CHECK(std::memcmp(a[k].points.a.data(), b[k].points.a.data(),
                          a[k].points.size() * sizeof(double)) == 0);

    kernels::set_mode(kernels::Mode::Serial);
    const auto c = simulate(s, Scheme::Forward, grid, 500, 44);
    kernels::set_mode(kernels::Mode::Parallel);
    for (std::size_t k = 0; k < a.size(); ++k)
        CHECK(std::memcmp(a[k].points.a.data(), c[k].points.a.data(),
                          a[k].points.size() * sizeof(double)) == 0);
}

TEST_CASE("trajectory dump round-trips through the text format") {
    SdeSpec s = make_benchmark(Benchmark::OuLevy, 2, 1.75, 12);
    const TimeGrid grid = TimeGrid::uniform(0.5, 4);
    const auto batches = simulate(s, Scheme::Implicit, grid, 25, 91);
    const std::string path = "dump_test.txt";
    write_batch_dump(path, "ou", s, "implicit", grid, 91, batches);
    const auto back = read_batch_dump(path);
    REQUIRE(back.size() == batches.size());
    for (std::size_t k = 0; k < batches.size(); ++k) {
        REQUIRE(back[k].points.rows == batches[k].points.rows);
        for (std::size_t i = 0; i < batches[k].points.size(); ++i)
            CHECK(back[k].points.a[i] == batches[k].points.a[i]);
    }
    std::remove(path.c_str());
}

TEST_CASE("time grid validation") {
    CHECK_THROWS_AS(TimeGrid::uniform(0.0, 10), ConfigError);
    TimeGrid g;
    g.t = {0.0, 0.5, 0.5, 1.0};
    CHECK_THROWS_AS(g.validate(), ConfigError);
    g.t = {0.1, 0.5};
    CHECK_THROWS_AS(g.validate(), ConfigError);
}

TEST_CASE("drift catalog derivatives agree with finite differences") {
    for (auto tag : {DriftTag::TanhRadial, DriftTag::Polynomial, DriftTag::Linear,
                     DriftTag::LinearOverAlpha}) {
        SdeSpec s;
        s.d = 3;
        s.drift = tag;
        s.levy_alpha = 1.9;
        Rng rng(8, (std::uint64_t)tag);
        double x[3];
        for (auto& v : x) v = rng.gauss();
        const Mat J = s.drift_jacobian(x, 0.3);
        const double h = 1e-6;
        double fp[3], fm[3];
        for (int c = 0; c < 3; ++c) {
            double xp[3] = {x[0], x[1], x[2]};
            double xm[3] = {x[0], x[1], x[2]};
            xp[c] += h;
            xm[c] -= h;
            s.drift_eval(xp, 0.3, fp);
            s.drift_eval(xm, 0.3, fm);
            for (int r = 0; r < 3; ++r)
                CHECK(J(r, c) == doctest::Approx((fp[r] - fm[r]) / (2 * h)).epsilon(1e-5).scale(0.01));
            const double divp = s.drift_divergence(xp, 0.3);
            const double divm = s.drift_divergence(xm, 0.3);
            double grad[3];
            s.drift_divergence_gradient(x, 0.3, grad);
            CHECK(grad[c] == doctest::Approx((divp - divm) / (2 * h)).epsilon(1e-5).scale(0.01));
        }
        // divergence equals the Jacobian trace
        double tr = 0.0;
        for (int i = 0; i < 3; ++i) tr += J(i, i);
        CHECK(s.drift_divergence(x, 0.3) == doctest::Approx(tr).epsilon(1e-12));
    }
}
