#pragma once

#include <optional>

#include "fsde/fields.hpp"
#include "fsde/scorematch.hpp"
#include "fsde/sde.hpp"

namespace fsde {

// Log-likelihood model. Hard mode composes q = NN(x,t) t + log p0(x) so the
// initial condition holds exactly; soft mode trains a plain NN with a
// weighted initial loss (the route for non-smooth initial densities).
struct LlModel {
    Mlp core;
    bool hard = true;
    InitialDistribution initial;

    // constraint pieces for the Gaussian kinds (quad = Sigma^{-1})
    std::optional<ScalarHardConstraint> constraint;
};

LlModel make_ll_model(const InitialDistribution& initial,
                      const std::vector<int>& hidden, std::uint64_t seed,
                      bool hard);

// A^alpha = f - 1/2 div(G G^T) - sigma^alpha S^alpha. The diffusion catalog
// is x-independent so the middle term is identically zero. salpha may be
// null when sigma = 0. Optionally returns div A as well.
Mat a_alpha_values(const SdeSpec& spec, const Mlp* salpha, const Mat& X,
                   std::vector<double>* div_a = nullptr);

// Field-based variant for closed-form stand-ins.
Mat a_alpha(const SdeSpec& spec, const VectorField& salpha, const Mat& X,
            std::vector<double>* div_a = nullptr);

// LL-PDE residual dt q - [ 1/2 div(G G^T grad q) + 1/2 ||G^T grad q||^2
//                          - <A, grad q> - div A ] over batch rows.
std::vector<double> ll_pde_residual(const ScalarField& q, const VectorField& salpha,
                                    const SdeSpec& spec, const Mat& X);

// Brownian-only variant (no fractional score net involved).
std::vector<double> ll_pde_residual(const ScalarField& q, const SdeSpec& spec,
                                    const Mat& X);

double evaluate_ll(const LlModel& model, const double* x, int d, double t);
std::vector<double> evaluate_ll_batch(const LlModel& model, const Mat& X);

struct LlTrainResult {
    std::vector<TrainLogRow> log;
    long aborted_epoch = -1;
};

// Algorithm steps 2-3: minimize the smooth-L1 PDE residual (plus the
// weighted initial mismatch in soft mode) with fresh residual points per
// epoch. salpha stays frozen; may be null when sigma = 0.
LlTrainResult train_ll(LlModel& model, const Mlp* salpha, const SdeSpec& spec,
                       const TrainPlan& plan, const ResidualSampler& sampler,
                       const EpochHook& hook = {});

} // namespace fsde
