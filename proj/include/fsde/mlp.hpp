#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fsde/graph.hpp"
#include "fsde/mat.hpp"

namespace fsde {

// Fully connected tanh network. Weights are stored (fan_in x fan_out) so a
// batch forward is X * W. Hidden layers use tanh, the output layer is linear
// (twice differentiable everywhere, as the PDE residuals require).
struct Mlp {
    std::vector<int> sizes; // input, hidden..., output
    std::vector<Mat> W;
    std::vector<Mat> b;

    int in_dim() const { return sizes.front(); }
    int out_dim() const { return sizes.back(); }
    int n_layers() const { return (int)W.size(); }
    long n_params() const;
};

// Uniform +-sqrt(6/(fan_in+fan_out)) init.
Mlp make_mlp(const std::vector<int>& sizes, std::uint64_t seed);

// Plain batched forward; X is n x in_dim.
Mat mlp_forward(const Mlp& net, const Mat& X);

// --- graph emission ------------------------------------------------------

struct MlpNodes {
    std::vector<int> W, b;
};

// Register the parameters as graph leaves (trainable or frozen constants).
MlpNodes mlp_params(Graph& g, const Mlp& net, bool trainable);

// Emit the forward computation for input node x (n x in_dim).
int mlp_emit(Graph& g, const Mlp& net, const MlpNodes& p, int x);

// Pull gradient values for every parameter out of the graph; missing
// gradients (output independent of the leaf) come back as zeros.
void mlp_collect_grads(const Graph& g, const MlpNodes& p,
                       const std::vector<int>& grads_w,
                       const std::vector<int>& grads_b,
                       std::vector<Mat>& gW, std::vector<Mat>& gB);

// Convenience: d loss / d theta for a scalar loss node.
struct MlpGrads {
    std::vector<Mat> W, b;
};
MlpGrads mlp_backward(Graph& g, const MlpNodes& p, int loss);

// --- input derivatives (spec ops) ----------------------------------------

struct InputDerivs {
    // per point: out_dim x in_dim Jacobian
    std::vector<Mat> jac;
    // order 2, scalar output: per point in_dim x in_dim Hessian
    std::vector<Mat> hess;
    // vector output with out_dim == spatial_d: divergence and its gradient
    std::vector<double> div;
    Mat div_grad; // n x in_dim (order 2 only)
};

// spatial_d: number of leading inputs that count as x (the rest is time).
// order 1: Jacobians (+ divergence when out_dim == spatial_d).
// order 2: adds the Hessian (scalar output) or grad-divergence (vector).
InputDerivs input_derivatives(const Mlp& net, const Mat& X, int spatial_d,
                              int order);

// Exact divergence over the first d inputs via d directional passes.
std::vector<double> divergence(const Mlp& net, const Mat& X, int d);

// Fast non-graph pack for frozen nets: values, divergence over the first d
// inputs, and optionally the time-column derivative, via batched forward
// tangent propagation.
void mlp_value_div(const Mlp& net, const Mat& X, int d, Mat& values,
                   std::vector<double>& div);

// --- losses / optimizer ---------------------------------------------------

// Smooth-L1 with threshold beta, averaged over all components:
// |e|^2 below beta, 2 beta |e| - beta^2 above. beta = +inf is plain MSE.
double smooth_l1(const std::vector<double>& pred,
                 const std::vector<double>& target, double beta);

struct TrainPlan {
    long epochs = 20000;
    long batch_size = 1024;
    double lr0 = 1e-3;
    double decay_rate = 0.9;
    long decay_interval = 10000;
    double smooth_l1_beta = 1.0;
    double lambda_initial = 20.0;
    double lambda_residual = 1.0;
    double t_min = 1e-3;
    std::uint64_t seed = 0;

    void validate() const;
};

double plan_lr(const TrainPlan& plan, long epoch);

struct AdamState {
    std::vector<Mat> mW, vW, mB, vB;
    long step = 0;
};

AdamState make_adam_state(const Mlp& net);

// Standard Adam (beta1 0.9, beta2 0.999, eps 1e-8) with the plan's
// exponentially decayed learning rate. Throws TrainingError on non-finite
// gradients, carrying the epoch.
void adam_step(AdamState& st, Mlp& net, const MlpGrads& grads,
               const TrainPlan& plan, long epoch);

// --- checkpoint io ---------------------------------------------------------

// Versioned binary container; round-trips bit-exactly.
void save_checkpoint(const std::string& path, const Mlp& net,
                     std::uint64_t plan_fingerprint);
Mlp load_checkpoint(const std::string& path,
                    std::uint64_t* plan_fingerprint = nullptr);

std::uint64_t plan_fingerprint(const TrainPlan& plan);

} // namespace fsde
