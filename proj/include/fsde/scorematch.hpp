#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "fsde/fields.hpp"
#include "fsde/mlp.hpp"
#include "fsde/sde.hpp"

namespace fsde {

// Conditional fractional score target -(x - x0)/(alpha gamma_t^alpha).
std::vector<double> conditional_fractional_target(const std::vector<double>& x,
                                                  const std::vector<double>& x0,
                                                  double gamma_t, double alpha);

// --- batches ----------------------------------------------------------------

// Pure-Levy conditional pairs: x = x0t + gamma_t * (unit stable draw).
struct FsmBatch {
    Mat x;    // n x d observed
    Mat x0t;  // n x d transformed starting points
    std::vector<double> gamma_t;
    std::vector<double> t;
};

// Gaussian (+) Levy decomposition: x = shift + gaussian + levy.
struct MixedFsmBatch {
    Mat shift, gaussian, levy;
    std::vector<double> gamma_t;
    std::vector<double> t;
};

struct XtBatch {
    Mat x; // n x d
    std::vector<double> t;
};

struct LossResult {
    double loss = 0.0;
    MlpGrads grads;
};

// --- losses -------------------------------------------------------------------

// Smooth-L1 regression of the net onto the conditional target.
LossResult fsm_loss(const Mlp& net, const FsmBatch& batch, double alpha, double beta);

// Mixed-noise estimator: smooth-L1 of S(x;theta) + levy/(alpha gamma_t^alpha);
// minimizing it matches the appendix objective E||S||^2 + 2 E<S, l/(a g^a)> up
// to a theta-independent constant. Degenerates to fsm_loss when the Gaussian
// part is zero and shift = x0t.
LossResult mixed_noise_fsm_loss(const Mlp& net, const MixedFsmBatch& batch,
                                double alpha, double beta);

// Exact-divergence score matching: mean(1/2 ||S||^2 + div S). The optional
// constraint wraps the net as S = NN(x,t) t - C x.
LossResult ssm_loss(const Mlp& net, const XtBatch& batch,
                    const std::optional<Mat>& hard_constraint = {});

// Score-fPDE residual trainer: smooth-L1 of the residual against zero,
// gradients w.r.t. the fractional net only.
LossResult score_fpinn_loss(const Mlp& s2_net,
                            const std::optional<Mat>& s2_constraint,
                            const Mlp& salpha_net, const SdeSpec& spec,
                            const XtBatch& batch, double beta);

// --- residual (generic over fields, used by tests and cross-checks) -----------

// residual = dt S2 - grad_x [ 1/2 div(G G^T S2) + 1/2 ||G^T S2||^2
//                             - <A, S2> - div A ],
// A = f - 1/2 div(G G^T) - sigma^alpha S_alpha. Returns n x d.
Mat score_fpde_residual(const VectorField& s2, const VectorField& salpha,
                        const SdeSpec& spec, const Mat& X);

// --- sampling -----------------------------------------------------------------

enum class TimeSampling { Continuous, Grid };

// Residual-point source: exact marginal laws where available, otherwise a
// pre-simulated trajectory pool. Batches are deterministic in (seed, epoch).
class ResidualSampler {
public:
    virtual ~ResidualSampler() = default;
    virtual int dim() const = 0;
    virtual XtBatch sample_xt(long n, std::uint64_t seed) const = 0;
    // Gaussian/Levy decomposition for the FSM estimators
    virtual bool has_parts() const { return false; }
    virtual MixedFsmBatch sample_parts(long n, std::uint64_t seed) const;
};

class ExactMarginalSampler : public ResidualSampler {
public:
    ExactMarginalSampler(Benchmark b, const SdeSpec& spec, double t_min,
                         TimeSampling ts, std::vector<double> grid_times = {});
    int dim() const override { return spec_.d; }
    XtBatch sample_xt(long n, std::uint64_t seed) const override;
    bool has_parts() const override { return true; }
    MixedFsmBatch sample_parts(long n, std::uint64_t seed) const override;

private:
    Benchmark b_;
    SdeSpec spec_;
    double t_min_;
    TimeSampling ts_;
    std::vector<double> times_;
    std::vector<Mat> cov_sqrt_; // per grid time (complicated benchmark)
    double pick_time(Rng& rng) const;
    const Mat* cov_sqrt_for(std::size_t time_index) const;
};

// Draws batch points from recorded simulation batches (t > 0 slices).
class PoolSampler : public ResidualSampler {
public:
    explicit PoolSampler(std::vector<SampleBatch> pool);
    int dim() const override;
    XtBatch sample_xt(long n, std::uint64_t seed) const override;

private:
    std::vector<SampleBatch> pool_;
};

// --- training -----------------------------------------------------------------

enum class ScoreRoute { Fsm, MixedFsm, ScoreFpinn };

ScoreRoute score_route_from_string(const std::string& s);
std::string score_route_name(ScoreRoute r);

struct ScoreTrainTask {
    Benchmark benchmark = Benchmark::OuLevy;
    SdeSpec spec;
    ScoreRoute route = ScoreRoute::Fsm;
    std::vector<int> hidden{128, 128, 128}; // hidden widths (4-layer default)
    TrainPlan plan;     // fractional-score stage
    TrainPlan s2_plan;  // SSM stage (Score-fPINN route)
    TimeSampling time_sampling = TimeSampling::Continuous;
    std::vector<double> grid_times;
};

struct TrainLogRow {
    long epoch;
    double lr;
    double loss;
    double wall_ms;
};

struct ScoreTrainResult {
    Mlp salpha;                  // trained fractional-score net
    std::optional<Mlp> s2;      // vanilla-score net (Score-fPINN route)
    std::optional<Mat> s2_constraint;
    std::vector<TrainLogRow> log;
    std::vector<TrainLogRow> s2_log;
    long aborted_epoch = -1; // >= 0 when training stopped on a non-finite loss
};

using EpochHook = std::function<void(long, double, double)>; // epoch, lr, loss

ScoreTrainResult train_score(const ScoreTrainTask& task,
                             const ResidualSampler& sampler,
                             const EpochHook& hook = {});

} // namespace fsde
