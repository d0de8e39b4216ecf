#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <limits>

#include "fsde/fields.hpp"
#include "fsde/graph.hpp"
#include "fsde/mlp.hpp"
#include "fsde/rng.hpp"

using namespace fsde;

namespace {

Mat random_inputs(int n, int cols, std::uint64_t seed, double scale = 1.0) {
    Rng rng(seed, 0);
    Mat x(n, cols);
    for (auto& v : x.a) v = scale * rng.gauss();
    return x;
}

double spectral_norm(const Mat& W) {
    // power iteration on W^T W
    std::vector<double> v((std::size_t)W.cols, 1.0);
    double lam = 0.0;
    for (int it = 0; it < 60; ++it) {
        std::vector<double> wv((std::size_t)W.rows, 0.0);
        for (int r = 0; r < W.rows; ++r)
            for (int c = 0; c < W.cols; ++c) wv[(std::size_t)r] += W(r, c) * v[(std::size_t)c];
        std::vector<double> wtwv((std::size_t)W.cols, 0.0);
        for (int r = 0; r < W.rows; ++r)
            for (int c = 0; c < W.cols; ++c) wtwv[(std::size_t)c] += W(r, c) * wv[(std::size_t)r];
        double nrm = 0.0;
        for (double u : wtwv) nrm += u * u;
        nrm = std::sqrt(nrm);
        lam = nrm;
        for (auto& u : wtwv) u /= nrm;
        v = wtwv;
    }
    return std::sqrt(lam);
}

} // namespace

TEST_CASE("mlp forward: zero net and single linear layer") {
    Mlp zero = make_mlp({3, 4, 2}, 1);
    for (auto& w : zero.W) w.fill(0.0);
    for (auto& b : zero.b) b.fill(0.0);
    const Mat y = mlp_forward(zero, random_inputs(5, 3, 2));
    for (double v : y.a) CHECK(v == 0.0);

    Mlp lin = make_mlp({3, 2}, 3);
    const Mat x = random_inputs(7, 3, 4);
    const Mat y2 = mlp_forward(lin, x);
    for (int i = 0; i < 7; ++i)
        for (int j = 0; j < 2; ++j) {
            double want = lin.b[0](0, j);
            for (int k = 0; k < 3; ++k) want += x(i, k) * lin.W[0](k, j);
            CHECK(y2(i, j) == doctest::Approx(want).epsilon(1e-14));
        }
}

TEST_CASE("mlp forward Lipschitz bound from spectral norms") {
    const Mlp net = make_mlp({4, 16, 16, 3}, 5);
    double L = 1.0;
    for (const auto& w : net.W) L *= spectral_norm(w);
    Rng rng(6, 0);
    for (int trial = 0; trial < 20; ++trial) {
        Mat x(1, 4), xh(1, 4);
        double hn = 0.0;
        for (int c = 0; c < 4; ++c) {
            x(0, c) = rng.gauss();
            const double h = 1e-2 * rng.gauss();
            xh(0, c) = x(0, c) + h;
            hn += h * h;
        }
        hn = std::sqrt(hn);
        const Mat y0 = mlp_forward(net, x);
        const Mat y1 = mlp_forward(net, xh);
        double dn = 0.0;
        for (int c = 0; c < 3; ++c) dn += (y1(0, c) - y0(0, c)) * (y1(0, c) - y0(0, c));
        CHECK(std::sqrt(dn) <= L * hn * (1.0 + 1e-12));
    }
}

TEST_CASE("graph backward matches finite differences on mixed ops") {
    Rng rng(7, 0);
    Mat A = random_inputs(3, 4, 8);
    Mat B = random_inputs(3, 4, 9);
    for (auto& v : B.a) v = 1.5 + std::fabs(v); // keep division well away from 0
    Mat C = random_inputs(3, 4, 10);
    for (auto& v : C.a) v = 0.5 + std::fabs(v); // sqrt domain

    auto value = [&](const Mat& a, const Mat& b, const Mat& c) {
        Graph g;
        const int na = g.leaf(a, true);
        const int nb = g.leaf(b, true);
        const int nc = g.leaf(c, true);
        const int expr = g.mul(g.div(na, nb), g.sqrt_(nc));
        const int tanh_part = g.tanh_(g.rowsum(expr));
        return std::pair<Graph, int>(std::move(g), 0), g; // unused
    };
    (void)value;

    auto eval_scalar = [&](const Mat& a, const Mat& b, const Mat& c) {
        Graph g;
        const int na = g.leaf(a, true);
        const int nb = g.leaf(b, true);
        const int nc = g.leaf(c, true);
        const int expr = g.mul(g.div(na, nb), g.sqrt_(nc));
        const int th = g.tanh_(g.rowsum(expr));
        const int out = g.sum_all(g.mul(th, th));
        return g.val(out).a[0];
    };

    Graph g;
    const int na = g.leaf(A, true);
    const int nb = g.leaf(B, true);
    const int nc = g.leaf(C, true);
    const int expr = g.mul(g.div(na, nb), g.sqrt_(nc));
    const int th = g.tanh_(g.rowsum(expr));
    const int out = g.sum_all(g.mul(th, th));
    const auto grads = g.backward(out, {na, nb, nc});

    const double h = 1e-6;
    const Mat* mats[3] = {&A, &B, &C};
    for (int m = 0; m < 3; ++m) {
        const Mat& gv = g.val(grads[m]);
        Mat pert = *mats[m];
        for (int idx = 0; idx < (int)pert.size(); idx += 3) {
            const double keep = pert.a[(std::size_t)idx];
            pert.a[(std::size_t)idx] = keep + h;
            const double fp = eval_scalar(m == 0 ? pert : A, m == 1 ? pert : B,
                                          m == 2 ? pert : C);
            pert.a[(std::size_t)idx] = keep - h;
            const double fm = eval_scalar(m == 0 ? pert : A, m == 1 ? pert : B,
                                          m == 2 ? pert : C);
            pert.a[(std::size_t)idx] = keep;
            const double fd = (fp - fm) / (2.0 * h);
            CHECK(gv.a[(std::size_t)idx] == doctest::Approx(fd).epsilon(1e-6));
        }
    }
}

TEST_CASE("input derivatives: linear net has Jacobian W and zero curvature") {
    Mlp lin = make_mlp({3, 2}, 11);
    const Mat X = random_inputs(4, 3, 12);
    const auto derivs = input_derivatives(lin, X, 2, 2);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 2; ++j)
            for (int k = 0; k < 3; ++k)
                CHECK(derivs.jac[(std::size_t)i](j, k) ==
                      doctest::Approx(lin.W[0](k, j)).epsilon(1e-13));
    for (std::size_t i = 0; i < derivs.div_grad.size(); ++i)
        CHECK(derivs.div_grad.a[i] == doctest::Approx(0.0).scale(1.0).epsilon(1e-13));
}

TEST_CASE("input derivatives: scalar tanh has f'(0)=1, f''(0)=0") {
    Mlp net = make_mlp({1, 1, 1}, 13);
    net.W[0](0, 0) = 1.0;
    net.b[0](0, 0) = 0.0;
    net.W[1](0, 0) = 1.0;
    net.b[1](0, 0) = 0.0;
    Mat X(1, 1);
    const auto derivs = input_derivatives(net, X, 1, 2);
    CHECK(derivs.jac[0](0, 0) == doctest::Approx(1.0).epsilon(1e-13));
    CHECK(derivs.hess[0](0, 0) == doctest::Approx(0.0).scale(1.0).epsilon(1e-13));
}

TEST_CASE("input derivatives vs central differences on a 4x128 net") {
    const Mlp net = make_mlp({4, 128, 128, 128, 1}, 14);
    const Mat X = random_inputs(3, 4, 15);
    const auto derivs = input_derivatives(net, X, 3, 1);
    const double h = 1e-5;
    for (int i = 0; i < 3; ++i) {
        for (int c = 0; c < 4; ++c) {
            Mat xp = X, xm = X;
            xp(i, c) += h;
            xm(i, c) -= h;
            const double fd =
                (mlp_forward(net, xp)(i, 0) - mlp_forward(net, xm)(i, 0)) / (2.0 * h);
            CHECK(std::fabs(derivs.jac[(std::size_t)i](0, c) - fd) <
                  1e-6 * std::max(1.0, std::fabs(fd)));
        }
    }
    CHECK_THROWS_AS(input_derivatives(net, X, 3, 3), CapabilityError);
}

TEST_CASE("divergence: closed forms and finite differences") {
    // S(x) = -x plus a time input that must not contribute
    const int d = 3;
    Mlp neg = make_mlp({d + 1, d}, 16);
    neg.W[0].fill(0.0);
    for (int i = 0; i < d; ++i) neg.W[0](i, i) = -1.0;
    neg.b[0].fill(0.0);
    const Mat X = random_inputs(5, d + 1, 17);
    auto div = divergence(neg, X, d);
    for (double v : div) CHECK(v == doctest::Approx(-d).epsilon(1e-13));

    // S(x) = A x -> trace(A)
    Rng rng(18, 0);
    Mlp an = make_mlp({d + 1, d}, 19);
    an.W[0].fill(0.0);
    double tr = 0.0;
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) {
            const double a = rng.gauss();
            an.W[0](i, j) = a; // S_j = sum_i A_ji x_i with A_ji = W[i][j]
            if (i == j) tr += a;
        }
    an.b[0].fill(0.0);
    div = divergence(an, X, d);
    for (double v : div) CHECK(v == doctest::Approx(tr).epsilon(1e-12));

    // random net vs FD and vs the tangent-propagation pack
    const Mlp net = make_mlp({d + 1, 32, 32, d}, 20);
    div = divergence(net, X, d);
    Mat vals;
    std::vector<double> div2;
    mlp_value_div(net, X, d, vals, div2);
    const Mat direct = mlp_forward(net, X);
    for (std::size_t i = 0; i < vals.size(); ++i)
        CHECK(vals.a[i] == doctest::Approx(direct.a[i]).epsilon(1e-12));
    const double h = 1e-6;
    for (int i = 0; i < X.rows; ++i) {
        double fd = 0.0;
        for (int c = 0; c < d; ++c) {
            Mat xp = X, xm = X;
            xp(i, c) += h;
            xm(i, c) -= h;
            fd += (mlp_forward(net, xp)(i, c) - mlp_forward(net, xm)(i, c)) / (2.0 * h);
        }
        CHECK(div[(std::size_t)i] == doctest::Approx(fd).epsilon(1e-6));
        CHECK(div2[(std::size_t)i] == doctest::Approx(div[(std::size_t)i]).epsilon(1e-11));
    }

    CHECK_THROWS_AS(divergence(net, X, d + 1), ShapeError);
}

TEST_CASE("second-order: Hessians symmetric and match FD of the gradient") {
    const Mlp net = make_mlp({3, 16, 16, 1}, 21);
    const Mat X = random_inputs(2, 3, 22);
    const auto derivs = input_derivatives(net, X, 2, 2);
    const double h = 1e-5;
    for (int i = 0; i < 2; ++i) {
        const Mat& H = derivs.hess[(std::size_t)i];
        for (int a = 0; a < 3; ++a)
            for (int b = 0; b < 3; ++b)
                CHECK(H(a, b) == doctest::Approx(H(b, a)).epsilon(1e-9));
        for (int a = 0; a < 3; ++a) {
            Mat xp = X, xm = X;
            xp(i, a) += h;
            xm(i, a) -= h;
            const auto dp = input_derivatives(net, xp, 2, 1);
            const auto dm = input_derivatives(net, xm, 2, 1);
            for (int b = 0; b < 3; ++b) {
                const double fd = (dp.jac[(std::size_t)i](0, b) -
                                   dm.jac[(std::size_t)i](0, b)) / (2.0 * h);
                CHECK(H(a, b) == doctest::Approx(fd).epsilon(2e-5).scale(0.01));
            }
        }
    }
}

TEST_CASE("grad of divergence matches FD (nested second order)") {
    const int d = 2;
    const Mlp net = make_mlp({d + 1, 12, 12, d}, 23);
    const Mat X = random_inputs(3, d + 1, 24);
    const auto derivs = input_derivatives(net, X, d, 2);
    const double h = 1e-5;
    for (int i = 0; i < 3; ++i)
        for (int c = 0; c < d; ++c) {
            Mat xp = X, xm = X;
            xp(i, c) += h;
            xm(i, c) -= h;
            const double fd = (divergence(net, xp, d)[(std::size_t)i] -
                               divergence(net, xm, d)[(std::size_t)i]) / (2.0 * h);
            CHECK(derivs.div_grad(i, c) == doctest::Approx(fd).epsilon(1e-5).scale(0.01));
        }
}

TEST_CASE("smooth_l1 values, continuity at beta, and the L2 limit") {
    CHECK(smooth_l1({1.0, 2.0}, {1.0, 2.0}, 1.0) == 0.0);
    CHECK(smooth_l1({0.5}, {0.0}, 1.0) == doctest::Approx(0.25));
    CHECK(smooth_l1({2.0}, {0.0}, 1.0) == doctest::Approx(3.0));

    // C^1 at |e| = beta: value and one-sided slopes agree
    const double beta = 0.7;
    const double eps = 1e-7;
    const double below = smooth_l1({beta - eps}, {0.0}, beta);
    const double above = smooth_l1({beta + eps}, {0.0}, beta);
    CHECK(above - below == doctest::Approx(2.0 * beta * 2.0 * eps).epsilon(1e-4));
    CHECK(below == doctest::Approx(beta * beta).epsilon(1e-5));

    // beta -> inf gives the exact mean square
    std::vector<double> p{0.3, -2.5, 4.0}, t{0.0, 1.0, -1.0};
    double mse = 0.0;
    for (int i = 0; i < 3; ++i) mse += (p[i] - t[i]) * (p[i] - t[i]);
    mse /= 3.0;
    CHECK(smooth_l1(p, t, std::numeric_limits<double>::infinity()) == mse);
    CHECK(smooth_l1(p, t, 100.0) == mse);
}

TEST_CASE("adam: zero grads, descent direction, quadratic bowl") {
    Mlp net = make_mlp({1, 1}, 25);
    AdamState st = make_adam_state(net);
    TrainPlan plan;
    plan.lr0 = 1e-2;
    plan.decay_rate = 1.0;

    const double w0 = net.W[0](0, 0);
    MlpGrads zero;
    zero.W.emplace_back(1, 1);
    zero.b.emplace_back(1, 1);
    adam_step(st, net, zero, plan, 0);
    CHECK(net.W[0](0, 0) == w0);
    CHECK(st.step == 1);

    // constant positive gradient pushes the parameter down
    MlpGrads gpos;
    gpos.W.emplace_back(1, 1);
    gpos.W[0](0, 0) = 3.0;
    gpos.b.emplace_back(1, 1);
    for (int i = 0; i < 50; ++i) adam_step(st, net, gpos, plan, i);
    CHECK(net.W[0](0, 0) < w0);

    // quadratic bowl from theta = 5
    Mlp bowl = make_mlp({1, 1}, 26);
    bowl.W[0](0, 0) = 5.0;
    bowl.b[0].fill(0.0);
    AdamState st2 = make_adam_state(bowl);
    MlpGrads g;
    g.W.emplace_back(1, 1);
    g.b.emplace_back(1, 1);
    for (int e = 0; e < 5000; ++e) {
        g.W[0](0, 0) = bowl.W[0](0, 0);
        g.b[0](0, 0) = bowl.b[0](0, 0);
        adam_step(st2, bowl, g, plan, e);
    }
    CHECK(std::fabs(bowl.W[0](0, 0)) < 1e-3);

    // non-finite gradient carries the epoch
    MlpGrads bad;
    bad.W.emplace_back(1, 1);
    bad.W[0](0, 0) = std::numeric_limits<double>::quiet_NaN();
    bad.b.emplace_back(1, 1);
    CHECK_THROWS_AS(adam_step(st, net, bad, plan, 123), TrainingError);
}

TEST_CASE("learning rate decays exponentially per interval") {
    TrainPlan plan;
    plan.lr0 = 1e-3;
    plan.decay_rate = 0.9;
    plan.decay_interval = 10000;
    CHECK(plan_lr(plan, 0) == doctest::Approx(1e-3));
    CHECK(plan_lr(plan, 9999) == doctest::Approx(1e-3));
    CHECK(plan_lr(plan, 10000) == doctest::Approx(9e-4));
    CHECK(plan_lr(plan, 25000) == doctest::Approx(1e-3 * 0.81));
}

TEST_CASE("checkpoint round-trip is bit exact") {
    const Mlp net = make_mlp({3, 8, 2}, 27);
    const TrainPlan plan;
    const std::string path = "ckpt_test.bin";
    save_checkpoint(path, net, plan_fingerprint(plan));
    std::uint64_t fp = 0;
    const Mlp back = load_checkpoint(path, &fp);
    CHECK(fp == plan_fingerprint(plan));
    REQUIRE(back.sizes == net.sizes);
    for (int l = 0; l < net.n_layers(); ++l) {
        CHECK(std::memcmp(back.W[(std::size_t)l].a.data(), net.W[(std::size_t)l].a.data(),
                          net.W[(std::size_t)l].size() * sizeof(double)) == 0);
        CHECK(std::memcmp(back.b[(std::size_t)l].a.data(), net.b[(std::size_t)l].a.data(),
                          net.b[(std::size_t)l].size() * sizeof(double)) == 0);
    }
    std::remove(path.c_str());
}

TEST_CASE("mlp parameter gradients match finite differences") {
    const Mlp net = make_mlp({3, 6, 2}, 28);
    const Mat X = random_inputs(5, 3, 29);
    const Mat target = random_inputs(5, 2, 30);

    auto loss_value = [&](const Mlp& m) {
        const Mat y = mlp_forward(m, X);
        std::vector<double> p(y.a.begin(), y.a.end());
        std::vector<double> t(target.a.begin(), target.a.end());
        return smooth_l1(p, t, 1.0);
    };

    Graph g;
    const int x = g.leaf(X, false);
    const auto p = mlp_params(g, net, true);
    const int y = mlp_emit(g, net, p, x);
    const int loss = g.smooth_l1_mean(g.sub(y, g.constant(target)), 1.0);
    const auto grads = mlp_backward(g, p, loss);

    const double h = 1e-6;
    Mlp m = net;
    for (int l = 0; l < net.n_layers(); ++l) {
        for (std::size_t i = 0; i < net.W[(std::size_t)l].size(); ++i) {
            const double keep = m.W[(std::size_t)l].a[i];
            m.W[(std::size_t)l].a[i] = keep + h;
            const double fp_ = loss_value(m);
            m.W[(std::size_t)l].a[i] = keep - h;
            const double fm_ = loss_value(m);
            m.W[(std::size_t)l].a[i] = keep;
            const double fd = (fp_ - fm_) / (2.0 * h);
            CHECK(grads.W[(std::size_t)l].a[i] ==
                  doctest::Approx(fd).epsilon(1e-5).scale(1e-3));
        }
    }
}

TEST_CASE("field packs: mlp vs analytic linear score on a linear net") {
    // a linear "net" S(x,t) = A x exactly (no tanh), so the analytic field
    // and the Mlp field must agree on every pack entry
    const int d = 2;
    Rng rng(31, 0);
    Mat A(d, d);
    for (auto& v : A.a) v = rng.gauss();

    Mlp lin = make_mlp({d + 1, d}, 32);
    lin.W[0].fill(0.0);
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) lin.W[0](i, j) = -A(i, j) * 0.0 + A(j, i) * 0.0;
    // S_j = sum_i W[i][j] x_i, want S = -A x -> W[i][j] = -A(j,i)
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) lin.W[0](i, j) = -A(j, i);
    lin.b[0].fill(0.0);

    const MlpVectorField mf(lin);
    const AnalyticLinearScore af(d, [&](double) { return A; },
                                 [&](double) { return Mat(d, d); });
    const Mat X = random_inputs(6, d + 1, 33);
    Mat M = identity(d);
    M(0, 1) = M(1, 0) = 0.25;
    const auto pm = mf.pack(X, &M);
    const auto pa = af.pack(X, &M);
    for (std::size_t i = 0; i < pm.S.size(); ++i)
        CHECK(pm.S.a[i] == doctest::Approx(pa.S.a[i]).epsilon(1e-12));
    for (int i = 0; i < 6; ++i) {
        CHECK(pm.divS[(std::size_t)i] == doctest::Approx(pa.divS[(std::size_t)i]).epsilon(1e-12));
        for (int r = 0; r < d; ++r)
            for (int c = 0; c < d; ++c)
                CHECK(pm.jac[(std::size_t)i](r, c) ==
                      doctest::Approx(pa.jac[(std::size_t)i](r, c)).epsilon(1e-12));
    }
    for (std::size_t i = 0; i < pm.grad_div.size(); ++i) {
        CHECK(pm.grad_div.a[i] == doctest::Approx(0.0).scale(1.0).epsilon(1e-11));
        CHECK(pm.grad_jac_M.a[i] == doctest::Approx(0.0).scale(1.0).epsilon(1e-11));
    }
    for (std::size_t i = 0; i < pm.dtS.size(); ++i)
        CHECK(pm.dtS.a[i] == doctest::Approx(0.0).scale(1.0).epsilon(1e-11));
}

TEST_CASE("scalar field pack: hard constraint and hessian contraction") {
    const int d = 2;
    const Mlp net = make_mlp({d + 1, 10, 10, 1}, 34);
    Mat P = identity(d);
    P(0, 0) = 2.0;
    const double c0 = -1.234;
    const MlpScalarField f(net, ScalarHardConstraint{P, c0});
    Mat X = random_inputs(4, d + 1, 35);
    // at t = 0 the constraint pins q = -1/2 x^T P x + c0
    for (int i = 0; i < 4; ++i) X(i, d) = 0.0;
    Mat M = identity(d);
    const auto pk = f.pack(X, &M);
    for (int i = 0; i < 4; ++i) {
        double quad = 0.0;
        for (int r = 0; r < d; ++r)
            for (int c = 0; c < d; ++c) quad += X(i, r) * P(r, c) * X(i, c);
        CHECK(pk.q[(std::size_t)i] == doctest::Approx(-0.5 * quad + c0).epsilon(1e-12));
    }

    // hessian contraction vs FD at generic times
    Mat X2 = random_inputs(3, d + 1, 36);
    for (int i = 0; i < 3; ++i) X2(i, d) = 0.4 + 0.2 * i;
    const auto p2 = f.pack(X2, &M);
    const double h = 1e-5;
    for (int i = 0; i < 3; ++i) {
        double fd = 0.0;
        for (int c = 0; c < d; ++c) {
            Mat xp = X2, xm = X2;
            xp(i, c) += h;
            xm(i, c) -= h;
            fd += (f.pack(xp).grad(i, c) - f.pack(xm).grad(i, c)) / (2.0 * h);
        }
        CHECK(p2.hess_contract[(std::size_t)i] == doctest::Approx(fd).epsilon(1e-5).scale(0.01));
    }
}
