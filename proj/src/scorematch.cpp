#include "fsde/scorematch.hpp"

#include <chrono>
#include <cmath>

#include "fsde/kernels.hpp"
#include "fsde/pde_terms.hpp"

namespace fsde {

std::vector<double> conditional_fractional_target(const std::vector<double>& x,
                                                  const std::vector<double>& x0,
                                                  double gamma_t, double alpha) {
    if (x.size() != x0.size()) throw ShapeError("conditional_fractional_target: sizes");
    if (!(gamma_t > 0.0)) throw ConfigError("conditional_fractional_target: gamma_t <= 0");
    const double c = -1.0 / (alpha * std::pow(gamma_t, alpha));
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = c * (x[i] - x0[i]);
    return out;
}


LossResult fsm_loss(const Mlp& net, const FsmBatch& batch, double alpha, double beta) {
    const int d = batch.x.cols;
    const long n = batch.x.rows;
    Mat target((int)n, d);
    for (long i = 0; i < n; ++i) {
        const double c =
            -1.0 / (alpha * std::pow(batch.gamma_t[(std::size_t)i], alpha));
        for (int cidx = 0; cidx < d; ++cidx)
            target((int)i, cidx) = c * (batch.x((int)i, cidx) - batch.x0t((int)i, cidx));
    }
    Graph g;
    const int x = g.leaf(pdeterms::with_time_column(batch.x, batch.t), false);
    const auto p = mlp_params(g, net, true);
    const int S = mlp_emit(g, net, p, x);
    const int loss = g.smooth_l1_mean(g.sub(S, g.constant(std::move(target))), beta);
    LossResult out;
    out.loss = g.val(loss).a[0];
    out.grads = mlp_backward(g, p, loss);
    return out;
}

LossResult mixed_noise_fsm_loss(const Mlp& net, const MixedFsmBatch& batch,
                                double alpha, double beta) {
    const int d = batch.shift.cols;
    const long n = batch.shift.rows;
    Mat x((int)n, d), lc((int)n, d);
    for (long i = 0; i < n; ++i) {
        const double c =
            1.0 / (alpha * std::pow(batch.gamma_t[(std::size_t)i], alpha));
        for (int cidx = 0; cidx < d; ++cidx) {
            x((int)i, cidx) = batch.shift((int)i, cidx) + batch.gaussian((int)i, cidx) +
                              batch.levy((int)i, cidx);
            lc((int)i, cidx) = c * batch.levy((int)i, cidx);
        }
    }
    Graph g;
    const int xn = g.leaf(pdeterms::with_time_column(x, batch.t), false);
    const auto p = mlp_params(g, net, true);
    const int S = mlp_emit(g, net, p, xn);
    const int loss = g.smooth_l1_mean(g.add(S, g.constant(std::move(lc))), beta);
    LossResult out;
    out.loss = g.val(loss).a[0];
    out.grads = mlp_backward(g, p, loss);
    return out;
}

LossResult ssm_loss(const Mlp& net, const XtBatch& batch,
                    const std::optional<Mat>& hard_constraint) {
    const int d = batch.x.cols;
    const long n = batch.x.rows;
    if (net.out_dim() != d) throw ShapeError("ssm_loss: net output width != d");
    Graph g;
    const int x = g.leaf(pdeterms::with_time_column(batch.x, batch.t), true);
    const int xd = g.slice_cols(x, 0, d);
    const int tcol = g.slice_cols(x, d, d + 1);
    const auto p = mlp_params(g, net, true);
    const int S = pdeterms::emit_constrained_score(g, net, p, x, xd, tcol, hard_constraint);

    const int half_norm = g.scale(g.sum_all(g.mul(S, S)), 0.5 / (double)n);
    int div_acc = -1;
    for (int c = 0; c < d; ++c) {
        const int gc = g.backward(g.sum_all(g.slice_cols(S, c, c + 1)), {x})[0];
        const int dc = g.sum_all(g.slice_cols(gc, c, c + 1));
        div_acc = div_acc < 0 ? dc : g.add(div_acc, dc);
    }
    const int loss = g.add(half_norm, g.scale(div_acc, 1.0 / (double)n));
    LossResult out;
    out.loss = g.val(loss).a[0];
    out.grads = mlp_backward(g, p, loss);
    return out;
}

LossResult score_fpinn_loss(const Mlp& s2_net,
                            const std::optional<Mat>& s2_constraint,
                            const Mlp& salpha_net, const SdeSpec& spec,
                            const XtBatch& batch, double beta) {
    const int d = spec.d;
    const long n = batch.x.rows;
    if (s2_net.out_dim() != d || salpha_net.out_dim() != d)
        throw ShapeError("score_fpinn_loss: nets must output width d");
    const double sa_coef = std::pow(spec.levy_sigma, spec.levy_alpha);

    Graph g;
    const int x = g.leaf(pdeterms::with_time_column(batch.x, batch.t), true);
    const int xd = g.slice_cols(x, 0, d);
    const int tcol = g.slice_cols(x, d, d + 1);
    const auto p2 = mlp_params(g, s2_net, false);
    const int S2 = pdeterms::emit_constrained_score(g, s2_net, p2, x, xd, tcol, s2_constraint);
    const auto pa = mlp_params(g, salpha_net, true);
    const int Sa = mlp_emit(g, salpha_net, pa, x);

    std::vector<int> g2((std::size_t)d), ga((std::size_t)d);
    for (int j = 0; j < d; ++j) {
        g2[(std::size_t)j] = g.backward(g.sum_all(g.slice_cols(S2, j, j + 1)), {x})[0];
        ga[(std::size_t)j] = g.backward(g.sum_all(g.slice_cols(Sa, j, j + 1)), {x})[0];
    }

    int dtS2 = -1;
    for (int j = 0; j < d; ++j) {
        const int col = g.pad_cols(g.slice_cols(g2[(std::size_t)j], d, d + 1), j, d);
        dtS2 = dtS2 < 0 ? col : g.add(dtS2, col);
    }
    int divSa = -1;
    for (int j = 0; j < d; ++j) {
        const int dj = g.slice_cols(ga[(std::size_t)j], j, j + 1);
        divSa = divSa < 0 ? dj : g.add(divSa, dj);
    }

    int psi = -1;
    auto psi_add = [&](int node) { psi = psi < 0 ? node : g.add(psi, node); };
    auto psi_sub = [&](int node) { psi = psi < 0 ? g.scale(node, -1.0) : g.sub(psi, node); };

    if (spec.has_brownian()) {
        psi_add(g.scale(pdeterms::emit_t1(g, spec, g2, tcol, d), 0.5));
        const int ms2 = pdeterms::emit_mv(g, spec, S2, tcol);
        psi_add(g.scale(g.rowsum(g.mul(S2, ms2)), 0.5));
    }
    const pdeterms::DriftNodes dn = pdeterms::emit_drift(g, spec, xd);
    if (dn.f >= 0) psi_sub(g.rowsum(g.mul(dn.f, S2)));
    if (sa_coef != 0.0) psi_add(g.scale(g.rowsum(g.mul(Sa, S2)), sa_coef));
    if (dn.divf >= 0) psi_sub(dn.divf);
    if (sa_coef != 0.0) psi_add(g.scale(divSa, sa_coef));

    int residual;
    if (psi >= 0) {
        const int gpsi = g.backward(g.sum_all(psi), {x})[0];
        residual = g.sub(dtS2, g.slice_cols(gpsi, 0, d));
    } else {
        residual = dtS2;
    }
    const int loss = g.smooth_l1_mean(residual, beta);
    LossResult out;
    out.loss = g.val(loss).a[0];
    out.grads = mlp_backward(g, pa, loss);
    return out;
}

Mat score_fpde_residual(const VectorField& s2, const VectorField& salpha,
                        const SdeSpec& spec, const Mat& X) {
    const int d = spec.d;
    if (X.cols != d + 1) throw ShapeError("score_fpde_residual: X must be n x (d+1)");
    const double sa_coef = std::pow(spec.levy_sigma, spec.levy_alpha);
    const int n = X.rows;
    Mat res(n, d);

    // time-dependent diffusion needs a per-point M; constant diffusions go in
    // one batch
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
        const double t0 = Xc(0, d);
        const Mat M = spec.ggt(t0);
        const bool want_m = spec.has_brownian();
        const auto p2 = s2.pack(Xc, want_m ? &M : nullptr);
        const auto pa = salpha.pack(Xc);

        for (int i = 0; i < rows; ++i) {
            const int row_out = per_point ? c : i;
            std::vector<double> xi((std::size_t)d);
            for (int k = 0; k < d; ++k) xi[(std::size_t)k] = Xc(i, k);
            const double ti = Xc(i, d);
            std::vector<double> f((std::size_t)d);
            spec.drift_eval(xi.data(), ti, f.data());
            const Mat Jf = spec.drift_jacobian(xi.data(), ti);
            std::vector<double> ddivf((std::size_t)d);
            spec.drift_divergence_gradient(xi.data(), ti, ddivf.data());

            // (M S2)_j
            std::vector<double> ms2((std::size_t)d, 0.0);
            if (want_m)
                for (int r = 0; r < d; ++r)
                    for (int k = 0; k < d; ++k) ms2[(std::size_t)r] += M(r, k) * p2.S(i, k);

            for (int k = 0; k < d; ++k) {
                double dpsi = 0.0;
                if (want_m) {
                    dpsi += 0.5 * p2.grad_jac_M(i, k);
                    for (int j = 0; j < d; ++j)
                        dpsi += ms2[(std::size_t)j] * p2.jac[(std::size_t)i](j, k);
                }
                // - d/dx_k <A, S2>, A = f - sa_coef * Sa
                for (int j = 0; j < d; ++j) {
                    const double dAjk =
                        Jf(j, k) - sa_coef * pa.jac[(std::size_t)i](j, k);
                    const double Aj = f[(std::size_t)j] - sa_coef * pa.S(i, j);
                    dpsi -= dAjk * p2.S(i, j) + Aj * p2.jac[(std::size_t)i](j, k);
                }
                // - d/dx_k div A
                dpsi -= ddivf[(std::size_t)k] - sa_coef * pa.grad_div(i, k);
                res(row_out, k) = p2.dtS(i, k) - dpsi;
            }
        }
    }
    return res;
}

MixedFsmBatch ResidualSampler::sample_parts(long, std::uint64_t) const {
    throw CapabilityError(
        "this sampler has no Gaussian/Levy decomposition; use the Score-fPINN route");
}

ExactMarginalSampler::ExactMarginalSampler(Benchmark b, const SdeSpec& spec,
                                           double t_min, TimeSampling ts,
                                           std::vector<double> grid_times)
    : b_(b), spec_(spec), t_min_(t_min), ts_(ts), times_(std::move(grid_times)) {
    if (!benchmark_has_exact_marginal(b))
        throw CapabilityError("ExactMarginalSampler: benchmark " + benchmark_name(b) +
                              " has no exact marginal");
    if (ts_ == TimeSampling::Grid) {
        if (times_.empty()) throw ConfigError("grid time sampling needs times");
        for (double t : times_)
            if (!(t > 0.0) || t > spec.horizon + 1e-12)
                throw ConfigError("grid time outside (0, T]");
        if (b_ == Benchmark::Complicated) {
            for (double t : times_) {
                Mat cov = brownian_integral_cov(spec_.B, t);
                Mat Q;
                std::vector<double> w;
                eig_sym(cov, Q, w);
                for (double& v : w) {
                    if (v < -1e-12) throw NumericError("sampler: negative cov eigenvalue");
                    if (v < 0.0) v = 0.0;
                }
                Mat qs = Q;
                for (int i = 0; i < spec_.d; ++i)
                    for (int j = 0; j < spec_.d; ++j) qs(i, j) *= std::sqrt(w[(std::size_t)j]);
                cov_sqrt_.push_back(matmul_nt(qs, Q));
            }
        }
    } else if (b_ == Benchmark::Complicated) {
        throw ConfigError(
            "complicated benchmark requires grid time sampling (precomputed sqrt)");
    }
    if (!(t_min_ > 0.0)) throw ConfigError("t_min must be > 0");
}

double ExactMarginalSampler::pick_time(Rng& rng) const {
    if (ts_ == TimeSampling::Continuous)
        return rng.uniform(t_min_, spec_.horizon);
    const std::size_t k = (std::size_t)(rng.uniform() * (double)times_.size());
    return times_[std::min(k, times_.size() - 1)];
}

const Mat* ExactMarginalSampler::cov_sqrt_for(std::size_t time_index) const {
    return cov_sqrt_.empty() ? nullptr : &cov_sqrt_[time_index];
}

MixedFsmBatch ExactMarginalSampler::sample_parts(long n, std::uint64_t seed) const {
    const int d = spec_.d;
    MixedFsmBatch out;
    out.shift = Mat((int)n, d);
    out.gaussian = Mat((int)n, d);
    out.levy = Mat((int)n, d);
    out.gamma_t.assign((std::size_t)n, 0.0);
    out.t.assign((std::size_t)n, 0.0);
    const StableLaw unit_law(spec_.levy_alpha, 1.0);
    const bool par = kernels::mode() == kernels::Mode::Parallel;
#pragma omp parallel for schedule(static) if (par && n > 512)
    for (long i = 0; i < n; ++i) {
        Rng rng(seed, 0x736d706c);
        rng.set_block((std::uint64_t)i);
        double t;
        std::size_t tidx = 0;
        if (ts_ == TimeSampling::Grid) {
            tidx = (std::size_t)(rng.uniform() * (double)times_.size());
            tidx = std::min(tidx, times_.size() - 1);
            t = times_[tidx];
        } else {
            t = rng.uniform(t_min_, spec_.horizon);
        }
        out.t[(std::size_t)i] = t;
        double* sh = out.shift.row((int)i);
        double* ga = out.gaussian.row((int)i);
        double* le = out.levy.row((int)i);
        spec_.initial.sample(rng, sh);
        const double coef =
            b_ == Benchmark::OuLevy ? std::exp(-t / spec_.levy_alpha) : 1.0;
        for (int c = 0; c < d; ++c) sh[c] *= coef;
        switch (b_) {
            case Benchmark::Basic:
            case Benchmark::Heat1d: {
                const double s = std::sqrt(t);
                for (int c = 0; c < d; ++c) ga[c] = s * rng.gauss();
                break;
            }
            case Benchmark::Complicated: {
                const Mat* cs = cov_sqrt_for(tidx);
                std::vector<double> z((std::size_t)d);
                for (int c = 0; c < d; ++c) z[(std::size_t)c] = rng.gauss();
                for (int r = 0; r < d; ++r) {
                    double s = 0.0;
                    for (int c = 0; c < d; ++c) s += (*cs)(r, c) * z[(std::size_t)c];
                    ga[r] = s;
                }
                break;
            }
            default: break;
        }
        if (spec_.has_levy()) {
            const double base = b_ == Benchmark::OuLevy
                                    ? std::pow(1.0 - std::exp(-t), 1.0 / spec_.levy_alpha)
                                    : std::pow(t, 1.0 / spec_.levy_alpha);
            const double gamma_t = spec_.levy_sigma * base;
            out.gamma_t[(std::size_t)i] = gamma_t;
            draw_isotropic_stable(unit_law, d, rng, le);
            for (int c = 0; c < d; ++c) le[c] *= gamma_t;
        }
    }
    return out;
}

XtBatch ExactMarginalSampler::sample_xt(long n, std::uint64_t seed) const {
    const auto parts = sample_parts(n, seed);
    XtBatch out;
    out.x = Mat((int)n, spec_.d);
    for (std::size_t i = 0; i < out.x.size(); ++i)
        out.x.a[i] = parts.shift.a[i] + parts.gaussian.a[i] + parts.levy.a[i];
    out.t = parts.t;
    return out;
}

PoolSampler::PoolSampler(std::vector<SampleBatch> pool) : pool_(std::move(pool)) {
    // residual points live strictly after the start
    std::vector<SampleBatch> kept;
    for (auto& b : pool_)
        if (b.t > 0.0) kept.push_back(std::move(b));
    pool_ = std::move(kept);
    if (pool_.empty()) throw ConfigError("PoolSampler: no positive-time batches");
}

int PoolSampler::dim() const { return pool_.front().points.cols; }

XtBatch PoolSampler::sample_xt(long n, std::uint64_t seed) const {
    XtBatch out;
    const int d = dim();
    out.x = Mat((int)n, d);
    out.t.assign((std::size_t)n, 0.0);
    Rng rng(seed, 0x706f6f6c);
    for (long i = 0; i < n; ++i) {
        const std::size_t b =
            std::min((std::size_t)(rng.uniform() * (double)pool_.size()), pool_.size() - 1);
        const Mat& pts = pool_[b].points;
        const long r = std::min((long)(rng.uniform() * (double)pts.rows), (long)pts.rows - 1);
        for (int c = 0; c < d; ++c) out.x((int)i, c) = pts((int)r, c);
        out.t[(std::size_t)i] = pool_[b].t;
    }
    return out;
}

ScoreRoute score_route_from_string(const std::string& s) {
    if (s == "fsm") return ScoreRoute::Fsm;
    if (s == "mixed-fsm") return ScoreRoute::MixedFsm;
    if (s == "score-fpinn") return ScoreRoute::ScoreFpinn;
    throw ConfigError("unknown score route '" + s + "'");
}

std::string score_route_name(ScoreRoute r) {
    switch (r) {
        case ScoreRoute::Fsm: return "fsm";
        case ScoreRoute::MixedFsm: return "mixed-fsm";
        case ScoreRoute::ScoreFpinn: return "score-fpinn";
    }
    throw NumericError("unreachable");
}

namespace {

std::vector<int> net_sizes(int d, const std::vector<int>& hidden) {
    std::vector<int> sizes;
    sizes.push_back(d + 1);
    for (int h : hidden) sizes.push_back(h);
    sizes.push_back(d);
    return sizes;
}

struct LoopResult {
    std::vector<TrainLogRow> log;
    long aborted_epoch = -1;
};

// Shared Adam loop with fresh batches per epoch, periodic snapshots, and a
// non-finite-loss abort that restores the last good parameters.
LoopResult train_loop(Mlp& net, const TrainPlan& plan,
                      const std::function<LossResult(std::uint64_t)>& step,
                      const EpochHook& hook) {
    plan.validate();
    LoopResult out;
    AdamState st = make_adam_state(net);
    Mlp snapshot = net;
    const long log_every = std::max(1L, plan.epochs / 200);
    const auto t0 = std::chrono::steady_clock::now();
    for (long epoch = 0; epoch < plan.epochs; ++epoch) {
        const std::uint64_t bseed = mix64(plan.seed + 0x9E3779B97F4A7C15ull * (std::uint64_t)(epoch + 1));
        const LossResult r = step(bseed);
        if (!std::isfinite(r.loss)) {
            net = snapshot; // last good checkpoint
            out.aborted_epoch = epoch;
            break;
        }
        adam_step(st, net, r.grads, plan, epoch);
        if (epoch % 256 == 0) snapshot = net;
        if (epoch % log_every == 0 || epoch + 1 == plan.epochs) {
            const double ms = std::chrono::duration<double, std::milli>(
                                  std::chrono::steady_clock::now() - t0)
                                  .count();
            out.log.push_back({epoch, plan_lr(plan, epoch), r.loss, ms});
            if (hook) hook(epoch, plan_lr(plan, epoch), r.loss);
        }
    }
    return out;
}

} // namespace

ScoreTrainResult train_score(const ScoreTrainTask& task,
                             const ResidualSampler& sampler,
                             const EpochHook& hook) {
    const int d = task.spec.d;
    if (sampler.dim() != d) throw ShapeError("train_score: sampler dimension mismatch");
    ScoreTrainResult out;

    switch (task.route) {
        case ScoreRoute::Fsm: {
            if (task.spec.has_brownian())
                throw ConfigError(
                    "fsm route needs a pure Levy conditional; use mixed-fsm or "
                    "score-fpinn for SDEs with a Brownian part");
            if (!sampler.has_parts())
                throw CapabilityError(
                    "fsm route needs a sampler with conditional decomposition");
            out.salpha = make_mlp(net_sizes(d, task.hidden), task.plan.seed);
            auto step = [&](std::uint64_t bseed) {
                const auto parts = sampler.sample_parts(task.plan.batch_size, bseed);
                FsmBatch b;
                b.x = Mat(parts.shift.rows, d);
                for (std::size_t i = 0; i < b.x.size(); ++i)
                    b.x.a[i] = parts.shift.a[i] + parts.levy.a[i];
                b.x0t = parts.shift;
                b.gamma_t = parts.gamma_t;
                b.t = parts.t;
                return fsm_loss(out.salpha, b, task.spec.levy_alpha,
                                task.plan.smooth_l1_beta);
            };
            const auto lr = train_loop(out.salpha, task.plan, step, hook);
            out.log = lr.log;
            out.aborted_epoch = lr.aborted_epoch;
            break;
        }
        case ScoreRoute::MixedFsm: {
            if (!sampler.has_parts())
                throw ConfigError(
                    "mixed-fsm route needs a decomposable conditional; use "
                    "score-fpinn for this SDE");
            out.salpha = make_mlp(net_sizes(d, task.hidden), task.plan.seed);
            auto step = [&](std::uint64_t bseed) {
                const auto parts = sampler.sample_parts(task.plan.batch_size, bseed);
                return mixed_noise_fsm_loss(out.salpha, parts, task.spec.levy_alpha,
                                            task.plan.smooth_l1_beta);
            };
            const auto lr = train_loop(out.salpha, task.plan, step, hook);
            out.log = lr.log;
            out.aborted_epoch = lr.aborted_epoch;
            break;
        }
        case ScoreRoute::ScoreFpinn: {
            // stage 1: vanilla score via SSM, hard-constrained when the
            // initial score is closed form
            Mlp s2 = make_mlp(net_sizes(d, task.hidden), task.s2_plan.seed + 1);
            std::optional<Mat> constraint;
            if (task.spec.initial.has_score())
                constraint = task.spec.initial.inv_covariance();
            auto ssm_step = [&](std::uint64_t bseed) {
                const auto b = sampler.sample_xt(task.s2_plan.batch_size, bseed);
                return ssm_loss(s2, b, constraint);
            };
            const auto lr2 = train_loop(s2, task.s2_plan, ssm_step, hook);
            out.s2_log = lr2.log;
            if (lr2.aborted_epoch >= 0) out.aborted_epoch = lr2.aborted_epoch;

            // stage 2: fractional score from the Score-fPDE, s2 frozen
            out.salpha = make_mlp(net_sizes(d, task.hidden), task.plan.seed);
            auto fp_step = [&](std::uint64_t bseed) {
                const auto b = sampler.sample_xt(task.plan.batch_size, bseed);
                return score_fpinn_loss(s2, constraint, out.salpha, task.spec, b,
                                        task.plan.smooth_l1_beta);
            };
            const auto lr = train_loop(out.salpha, task.plan, fp_step, hook);
            out.log = lr.log;
            if (lr.aborted_epoch >= 0) out.aborted_epoch = lr.aborted_epoch;
            out.s2 = std::move(s2);
            out.s2_constraint = constraint;
            break;
        }
    }
    return out;
}

} // namespace fsde
