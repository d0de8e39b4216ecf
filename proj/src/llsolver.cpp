#include "fsde/llsolver.hpp"

#include <chrono>
#include <cmath>

#include "fsde/pde_terms.hpp"

namespace fsde {

LlModel make_ll_model(const InitialDistribution& initial,
                      const std::vector<int>& hidden, std::uint64_t seed,
                      bool hard) {
    LlModel m;
    m.initial = initial;
    m.hard = hard;
    std::vector<int> sizes;
    sizes.push_back(initial.d + 1);
    for (int h : hidden) sizes.push_back(h);
    sizes.push_back(1);
    m.core = make_mlp(sizes, seed);
    if (hard) {
        if (!initial.has_score())
            throw ConfigError(
                "hard constraint needs a smooth closed-form initial log-density; "
                "use soft mode for this initial distribution");
        std::vector<double> zero((std::size_t)initial.d, 0.0);
        m.constraint = ScalarHardConstraint{initial.inv_covariance(),
                                            initial.log_density(zero.data())};
    }
    return m;
}

Mat a_alpha_values(const SdeSpec& spec, const Mlp* salpha, const Mat& X,
                   std::vector<double>* div_a) {
    const int d = spec.d;
    if (X.cols != d + 1) throw ShapeError("a_alpha_values: X must be n x (d+1)");
    const int n = X.rows;
    const double sa_coef = std::pow(spec.levy_sigma, spec.levy_alpha);

    Mat A(n, d);
    if (div_a) div_a->assign((std::size_t)n, 0.0);

    Mat svals;
    std::vector<double> sdiv;
    if (sa_coef != 0.0) {
        if (!salpha) throw ConfigError("a_alpha_values: sigma > 0 needs a score net");
        mlp_value_div(*salpha, X, d, svals, sdiv);
    }
    std::vector<double> f((std::size_t)d);
    for (int i = 0; i < n; ++i) {
        const double t = X(i, d);
        spec.drift_eval(X.row(i), t, f.data());
        const double div_ggt = 0.0; // catalog diffusions are x-independent
        for (int c = 0; c < d; ++c) {
            double v = f[(std::size_t)c] - 0.5 * div_ggt;
            if (sa_coef != 0.0) v -= sa_coef * svals(i, c);
            A(i, c) = v;
        }
        if (div_a) {
            double dv = spec.drift_divergence(X.row(i), t);
            if (sa_coef != 0.0) dv -= sa_coef * sdiv[(std::size_t)i];
            (*div_a)[(std::size_t)i] = dv;
        }
    }
    return A;
}

Mat a_alpha(const SdeSpec& spec, const VectorField& salpha, const Mat& X,
            std::vector<double>* div_a) {
    const int d = spec.d;
    const int n = X.rows;
    const double sa_coef = std::pow(spec.levy_sigma, spec.levy_alpha);
    const auto pk = salpha.pack(X);
    Mat A(n, d);
    if (div_a) div_a->assign((std::size_t)n, 0.0);
    std::vector<double> f((std::size_t)d);
    for (int i = 0; i < n; ++i) {
        const double t = X(i, d);
        spec.drift_eval(X.row(i), t, f.data());
        for (int c = 0; c < d; ++c)
            A(i, c) = f[(std::size_t)c] - sa_coef * pk.S(i, c);
        if (div_a)
            (*div_a)[(std::size_t)i] =
                spec.drift_divergence(X.row(i), t) - sa_coef * pk.divS[(std::size_t)i];
    }
    return A;
}

namespace {

std::vector<double> ll_residual_core(const ScalarField& q, const SdeSpec& spec,
                                     const Mat& X, const Mat& A,
                                     const std::vector<double>& divA) {
    const int d = spec.d;
    const int n = X.rows;
    std::vector<double> res((std::size_t)n, 0.0);

    const bool per_point = spec.diffusion == DiffusionTag::BPlusTI;
    const int chunks = per_point ? n : 1;
    for (int c = 0; c < chunks; ++c) {
        Mat Xc;
        int rows;
        if (per_point) {
            Xc = Mat(1, d + 1);
            for (int k = 0; k <= d; ++k) Xc(0, k) = X(c, k);
            rows = 1;
        } else {
            Xc = X;
            rows = n;
        }
        const Mat M = spec.ggt(Xc(0, d));
        const bool want_m = spec.has_brownian();
        const auto pk = q.pack(Xc, want_m ? &M : nullptr);
        for (int i = 0; i < rows; ++i) {
            const int row = per_point ? c : i;
            double inner = 0.0;
            if (want_m) {
                inner += 0.5 * pk.hess_contract[(std::size_t)i];
                // ||G^T grad q||^2 = grad q . M grad q
                double quad = 0.0;
                for (int r = 0; r < d; ++r) {
                    double mrow = 0.0;
                    for (int k = 0; k < d; ++k) mrow += M(r, k) * pk.grad(i, k);
                    quad += pk.grad(i, r) * mrow;
                }
                inner += 0.5 * quad;
            }
            double adot = 0.0;
            for (int k = 0; k < d; ++k) adot += A(row, k) * pk.grad(i, k);
            inner -= adot + divA[(std::size_t)row];
            res[(std::size_t)row] = pk.dtq[(std::size_t)i] - inner;
        }
    }
    return res;
}

} // namespace

std::vector<double> ll_pde_residual(const ScalarField& q, const VectorField& salpha,
                                    const SdeSpec& spec, const Mat& X) {
    std::vector<double> divA;
    const Mat A = a_alpha(spec, salpha, X, &divA);
    return ll_residual_core(q, spec, X, A, divA);
}

std::vector<double> ll_pde_residual(const ScalarField& q, const SdeSpec& spec,
                                    const Mat& X) {
    if (spec.has_levy())
        throw ConfigError("ll_pde_residual: sigma > 0 needs a fractional score");
    const int n = X.rows;
    const int d = spec.d;
    Mat A(n, d);
    std::vector<double> divA((std::size_t)n, 0.0);
    std::vector<double> f((std::size_t)d);
    for (int i = 0; i < n; ++i) {
        spec.drift_eval(X.row(i), X(i, d), f.data());
        for (int c = 0; c < d; ++c) A(i, c) = f[(std::size_t)c];
        divA[(std::size_t)i] = spec.drift_divergence(X.row(i), X(i, d));
    }
    return ll_residual_core(q, spec, X, A, divA);
}

double evaluate_ll(const LlModel& model, const double* x, int d, double t) {
    Mat X(1, d + 1);
    for (int c = 0; c < d; ++c) X(0, c) = x[c];
    X(0, d) = t;
    return evaluate_ll_batch(model, X)[0];
}

std::vector<double> evaluate_ll_batch(const LlModel& model, const Mat& X) {
    const int d = model.initial.d;
    if (X.cols != d + 1) throw ShapeError("evaluate_ll_batch: X must be n x (d+1)");
    const Mat nn = mlp_forward(model.core, X);
    std::vector<double> out((std::size_t)X.rows);
    for (int i = 0; i < X.rows; ++i) {
        if (model.hard)
            out[(std::size_t)i] =
                nn(i, 0) * X(i, d) + model.initial.log_density(X.row(i));
        else
            out[(std::size_t)i] = nn(i, 0);
    }
    return out;
}

LlTrainResult train_ll(LlModel& model, const Mlp* salpha, const SdeSpec& spec,
                       const TrainPlan& plan, const ResidualSampler& sampler,
                       const EpochHook& hook) {
    plan.validate();
    if (spec.has_levy() && !salpha)
        throw ConfigError("train_ll: sigma > 0 needs a frozen fractional score net");
    const int d = spec.d;
    LlTrainResult out;
    AdamState st = make_adam_state(model.core);
    Mlp snapshot = model.core;
    const long log_every = std::max(1L, plan.epochs / 200);
    const auto t0 = std::chrono::steady_clock::now();

    for (long epoch = 0; epoch < plan.epochs; ++epoch) {
        const std::uint64_t bseed =
            mix64(plan.seed + 0x9E3779B97F4A7C15ull * (std::uint64_t)(epoch + 1));
        const XtBatch batch = sampler.sample_xt(plan.batch_size, bseed);
        const Mat X = pdeterms::with_time_column(batch.x, batch.t);
        const long n = X.rows;

        // frozen pieces: A and div A at the batch points
        std::vector<double> divA;
        const Mat A = a_alpha_values(spec, salpha, X, &divA);
        Mat divA_col((int)n, 1);
        for (long i = 0; i < n; ++i) divA_col((int)i, 0) = divA[(std::size_t)i];

        Graph g;
        const int x = g.leaf(X, true);
        const int xd = g.slice_cols(x, 0, d);
        const int tcol = g.slice_cols(x, d, d + 1);
        const auto p = mlp_params(g, model.core, true);
        int q = mlp_emit(g, model.core, p, x);
        if (model.hard) {
            const int px = g.matmul(xd, g.constant(transpose(model.constraint->quad)));
            const int quad = g.scale(g.rowsum(g.mul(px, xd)), -0.5);
            q = g.add_scalar(g.add(g.mul_colvec(q, tcol), quad), model.constraint->c0);
        }
        const int w = g.backward(g.sum_all(q), {x})[0];
        const int wx = g.slice_cols(w, 0, d);
        const int dtq = g.slice_cols(w, d, d + 1);

        int inner = -1;
        auto inner_add = [&](int node) { inner = inner < 0 ? node : g.add(inner, node); };
        if (spec.has_brownian()) {
            const int mw = pdeterms::emit_mv(g, spec, wx, tcol);
            // trace(M Hess q) via one pass per column of M grad q
            int tm = -1;
            for (int j = 0; j < d; ++j) {
                const int s = g.sum_all(g.slice_cols(mw, j, j + 1));
                const int h = g.backward(s, {x})[0];
                const int hj = g.slice_cols(h, j, j + 1);
                tm = tm < 0 ? hj : g.add(tm, hj);
            }
            inner_add(g.scale(tm, 0.5));
            inner_add(g.scale(g.rowsum(g.mul(wx, mw)), 0.5));
        }
        inner_add(g.scale(g.rowsum(g.mul(wx, g.constant(A))), -1.0));
        inner_add(g.scale(g.constant(divA_col), -1.0));

        const int residual = g.sub(dtq, inner);
        int loss = g.scale(g.smooth_l1_mean(residual, plan.smooth_l1_beta),
                           plan.lambda_residual);

        if (!model.hard && plan.lambda_initial > 0.0) {
            // weighted initial mismatch on a fresh batch at t = 0
            Rng rng(bseed ^ 0x696e6974, 0);
            Mat X0((int)plan.batch_size, d + 1);
            Mat logp0((int)plan.batch_size, 1);
            std::vector<double> x0((std::size_t)d);
            for (long i = 0; i < plan.batch_size; ++i) {
                rng.set_block((std::uint64_t)i);
                model.initial.sample(rng, x0.data());
                for (int c = 0; c < d; ++c) X0((int)i, c) = x0[(std::size_t)c];
                X0((int)i, d) = 0.0;
                logp0((int)i, 0) = model.initial.log_density(x0.data());
            }
            const int x0n = g.leaf(std::move(X0), false);
            const int q0 = mlp_emit(g, model.core, p, x0n);
            const int mism = g.sub(q0, g.constant(std::move(logp0)));
            loss = g.add(loss, g.scale(g.smooth_l1_mean(mism, plan.smooth_l1_beta),
                                       plan.lambda_initial));
        }

        const double loss_v = g.val(loss).a[0];
        if (!std::isfinite(loss_v)) {
            model.core = snapshot;
            out.aborted_epoch = epoch;
            break;
        }
        const auto grads = mlp_backward(g, p, loss);
        adam_step(st, model.core, grads, plan, epoch);
        if (epoch % 256 == 0) snapshot = model.core;
        if (epoch % log_every == 0 || epoch + 1 == plan.epochs) {
            const double ms = std::chrono::duration<double, std::milli>(
                                  std::chrono::steady_clock::now() - t0)
                                  .count();
            out.log.push_back({epoch, plan_lr(plan, epoch), loss_v, ms});
            if (hook) hook(epoch, plan_lr(plan, epoch), loss_v);
        }
    }
    return out;
}

} // namespace fsde
