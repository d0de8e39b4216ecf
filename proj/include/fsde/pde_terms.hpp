#pragma once

// Shared graph builders for the PDE residual losses: drift terms from the
// catalog, diffusion contractions M(t) = G G^T expanded through the time
// column, and the hard-constrained score composition.

#include <optional>
#include <vector>

#include "fsde/graph.hpp"
#include "fsde/mlp.hpp"
#include "fsde/sde.hpp"

namespace fsde::pdeterms {

Mat with_time_column(const Mat& x, const std::vector<double>& t);

// S = NN(x,t) t - C x when a constraint matrix is given.
int emit_constrained_score(Graph& g, const Mlp& net, const MlpNodes& p, int x,
                           int xd, int tcol, const std::optional<Mat>& constraint);

struct DriftNodes {
    int f = -1;    // n x d, -1 when identically zero
    int divf = -1; // n x 1
};

DriftNodes emit_drift(Graph& g, const SdeSpec& spec, int xd);

// M(t) v for the diffusion catalog; -1 for zero diffusion.
int emit_mv(Graph& g, const SdeSpec& spec, int v, int tcol);

// sum_ij M(t)_ij dS_j/dx_i assembled from per-component gradient nodes
// (each n x (d+1), gradient of S_j w.r.t. the input leaf).
int emit_t1(Graph& g, const SdeSpec& spec, const std::vector<int>& comp_grads,
            int tcol, int d);

} // namespace fsde::pdeterms
