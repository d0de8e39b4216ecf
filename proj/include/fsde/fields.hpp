#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <vector>

#include "fsde/mat.hpp"
#include "fsde/mlp.hpp"

namespace fsde {

// Batched time-dependent fields over X = (x_1..x_d, t) rows. The PDE
// residual evaluators consume these packs, so the same evaluator runs on
// network-backed fields and on closed-form fields.

struct VectorFieldPack {
    Mat S;                    // n x d values
    Mat dtS;                  // n x d time derivatives
    std::vector<Mat> jac;     // per point: d x d spatial Jacobian dS_j/dx_k -> (j,k)
    std::vector<double> divS; // n
    Mat grad_div;             // n x d spatial gradient of the divergence
    Mat grad_jac_M;           // n x d spatial gradient of sum_ij M_ij dS_j/dx_i
};

class VectorField {
public:
    virtual ~VectorField() = default;
    virtual int dim() const = 0;
    // M, when given, requests grad_jac_M for that constant matrix.
    virtual VectorFieldPack pack(const Mat& X, const Mat* M = nullptr) const = 0;
};

struct ScalarFieldPack {
    std::vector<double> q;   // n values
    std::vector<double> dtq; // n
    Mat grad;                // n x d spatial gradient
    std::vector<double> hess_contract; // n: tr(M Hess q) when M given
};

class ScalarField {
public:
    virtual ~ScalarField() = default;
    virtual int dim() const = 0;
    virtual ScalarFieldPack pack(const Mat& X, const Mat* M = nullptr) const = 0;
};

// --- network-backed fields --------------------------------------------------

// S(x,t) = NN(x,t) * t - C x when the initial-score hard constraint is set,
// plain NN(x,t) otherwise.
class MlpVectorField : public VectorField {
public:
    MlpVectorField(const Mlp& net, std::optional<Mat> init_score_coef = {});
    int dim() const override { return d_; }
    VectorFieldPack pack(const Mat& X, const Mat* M = nullptr) const override;

private:
    const Mlp& net_;
    std::optional<Mat> coef_t_; // transposed C for row-vector products
    int d_;
};

// q(x,t) = NN(x,t) * t - 1/2 x^T P x + c0 under the hard constraint,
// plain NN(x,t) otherwise.
struct ScalarHardConstraint {
    Mat quad;  // P
    double c0; // additive constant of log p0
};

class MlpScalarField : public ScalarField {
public:
    MlpScalarField(const Mlp& net, std::optional<ScalarHardConstraint> hard = {});
    int dim() const override { return d_; }
    ScalarFieldPack pack(const Mat& X, const Mat* M = nullptr) const override;

private:
    const Mlp& net_;
    std::optional<ScalarHardConstraint> hard_;
    int d_;
};

// --- closed-form fields -------------------------------------------------------

// S(x,t) = -A(t) x; all second spatial derivatives vanish.
class AnalyticLinearScore : public VectorField {
public:
    using MatrixFn = std::function<Mat(double)>;
    AnalyticLinearScore(int d, MatrixFn A, MatrixFn dA_dt);
    int dim() const override { return d_; }
    VectorFieldPack pack(const Mat& X, const Mat* M = nullptr) const override;

private:
    int d_;
    MatrixFn A_, dA_;
};

// q(x,t) = -1/2 logdet(2 pi C(t)) - 1/2 x^T C(t)^{-1} x.
class AnalyticGaussianLl : public ScalarField {
public:
    using MatrixFn = std::function<Mat(double)>;
    AnalyticGaussianLl(int d, MatrixFn C, MatrixFn dC_dt);
    int dim() const override { return d_; }
    ScalarFieldPack pack(const Mat& X, const Mat* M = nullptr) const override;

private:
    int d_;
    MatrixFn C_, dC_;
};

} // namespace fsde
