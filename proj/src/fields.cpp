#include "fsde/fields.hpp"

#include <cmath>

#include "fsde/graph.hpp"

namespace fsde {

namespace {
constexpr double TWO_PI = 6.28318530717958647692528676655900577;
} // namespace

MlpVectorField::MlpVectorField(const Mlp& net, std::optional<Mat> init_score_coef)
    : net_(net), d_(net.out_dim()) {
    if (net.in_dim() != d_ + 1)
        throw ShapeError("MlpVectorField: net must map (x,t) -> R^d");
    if (init_score_coef) {
        if (init_score_coef->rows != d_ || init_score_coef->cols != d_)
            throw ShapeError("MlpVectorField: constraint matrix must be d x d");
        coef_t_ = transpose(*init_score_coef);
    }
}

VectorFieldPack MlpVectorField::pack(const Mat& X, const Mat* M) const {
    if (X.cols != d_ + 1) throw ShapeError("MlpVectorField::pack: X must be n x (d+1)");
    const int n = X.rows;
    const int d = d_;

    Graph g;
    const int x = g.leaf(X, true);
    const auto p = mlp_params(g, net_, false);
    int S = mlp_emit(g, net_, p, x);
    if (coef_t_) {
        const int tcol = g.slice_cols(x, d, d + 1);
        const int xd = g.slice_cols(x, 0, d);
        const int lin = g.matmul(xd, g.constant(*coef_t_));
        S = g.sub(g.mul_colvec(S, tcol), lin);
    }

    VectorFieldPack out;
    out.S = g.val(S);
    out.dtS = Mat(n, d);
    out.jac.assign((std::size_t)n, Mat(d, d));
    out.divS.assign((std::size_t)n, 0.0);

    // one pass per component: nabla_{x,t} S_j
    std::vector<int> comp(d, -1);
    for (int j = 0; j < d; ++j) {
        const int s = g.sum_all(g.slice_cols(S, j, j + 1));
        comp[(std::size_t)j] = g.backward(s, {x})[0];
        const Mat& gv = g.val(comp[(std::size_t)j]);
        for (int i = 0; i < n; ++i) {
            for (int k = 0; k < d; ++k) out.jac[(std::size_t)i](j, k) = gv(i, k);
            out.dtS(i, j) = gv(i, d);
            out.divS[(std::size_t)i] += gv(i, j);
        }
    }

    // grad of divergence
    int divnode = -1;
    for (int j = 0; j < d; ++j) {
        const int dj = g.slice_cols(comp[(std::size_t)j], j, j + 1);
        divnode = divnode < 0 ? dj : g.add(divnode, dj);
    }
    {
        const int gd = g.backward(g.sum_all(divnode), {x})[0];
        out.grad_div = Mat(n, d);
        if (gd >= 0) {
            const Mat& gv = g.val(gd);
            for (int i = 0; i < n; ++i)
                for (int k = 0; k < d; ++k) out.grad_div(i, k) = gv(i, k);
        }
    }

    if (M) {
        if (M->rows != d || M->cols != d) throw ShapeError("pack: M must be d x d");
        // T = sum_ij M_ij dS_j/dx_i per point, then its spatial gradient
        int T = -1;
        for (int j = 0; j < d; ++j) {
            Mat mcol(d, 1);
            for (int i = 0; i < d; ++i) mcol(i, 0) = (*M)(i, j);
            const int gx = g.slice_cols(comp[(std::size_t)j], 0, d);
            const int tj = g.matmul(gx, g.constant(mcol));
            T = T < 0 ? tj : g.add(T, tj);
        }
        const int gt = g.backward(g.sum_all(T), {x})[0];
        out.grad_jac_M = Mat(n, d);
        if (gt >= 0) {
            const Mat& gv = g.val(gt);
            for (int i = 0; i < n; ++i)
                for (int k = 0; k < d; ++k) out.grad_jac_M(i, k) = gv(i, k);
        }
    }
    return out;
}

MlpScalarField::MlpScalarField(const Mlp& net, std::optional<ScalarHardConstraint> hard)
    : net_(net), hard_(std::move(hard)), d_(net.in_dim() - 1) {
    if (net.out_dim() != 1) throw ShapeError("MlpScalarField: net must be scalar-valued");
    if (hard_ && (hard_->quad.rows != d_ || hard_->quad.cols != d_))
        throw ShapeError("MlpScalarField: constraint matrix must be d x d");
}

ScalarFieldPack MlpScalarField::pack(const Mat& X, const Mat* M) const {
    if (X.cols != d_ + 1) throw ShapeError("MlpScalarField::pack: X must be n x (d+1)");
    const int n = X.rows;
    const int d = d_;

    Graph g;
    const int x = g.leaf(X, true);
    const auto p = mlp_params(g, net_, false);
    int q = mlp_emit(g, net_, p, x);
    if (hard_) {
        const int tcol = g.slice_cols(x, d, d + 1);
        const int xd = g.slice_cols(x, 0, d);
        const int px = g.matmul(xd, g.constant(transpose(hard_->quad)));
        const int quad = g.scale(g.rowsum(g.mul(px, xd)), -0.5);
        q = g.add_scalar(g.add(g.mul_colvec(q, tcol), quad), hard_->c0);
    }

    ScalarFieldPack out;
    const Mat& qv = g.val(q);
    out.q.assign((std::size_t)n, 0.0);
    for (int i = 0; i < n; ++i) out.q[(std::size_t)i] = qv(i, 0);

    const int w = g.backward(g.sum_all(q), {x})[0];
    out.grad = Mat(n, d);
    out.dtq.assign((std::size_t)n, 0.0);
    const Mat& wv = g.val(w);
    for (int i = 0; i < n; ++i) {
        for (int k = 0; k < d; ++k) out.grad(i, k) = wv(i, k);
        out.dtq[(std::size_t)i] = wv(i, d);
    }

    if (M) {
        if (M->rows != d || M->cols != d) throw ShapeError("pack: M must be d x d");
        // tr(M H) = sum_j d/dx_j of (M grad q)_j for symmetric H
        const int wx = g.slice_cols(w, 0, d);
        const int mw = g.matmul(wx, g.constant(transpose(*M)));
        out.hess_contract.assign((std::size_t)n, 0.0);
        for (int j = 0; j < d; ++j) {
            const int s = g.sum_all(g.slice_cols(mw, j, j + 1));
            const int h = g.backward(s, {x})[0];
            if (h < 0) continue;
            const Mat& hv = g.val(h);
            for (int i = 0; i < n; ++i) out.hess_contract[(std::size_t)i] += hv(i, j);
        }
    }
    return out;
}

AnalyticLinearScore::AnalyticLinearScore(int d, MatrixFn A, MatrixFn dA_dt)
    : d_(d), A_(std::move(A)), dA_(std::move(dA_dt)) {}

VectorFieldPack AnalyticLinearScore::pack(const Mat& X, const Mat* M) const {
    const int n = X.rows;
    const int d = d_;
    VectorFieldPack out;
    out.S = Mat(n, d);
    out.dtS = Mat(n, d);
    out.jac.assign((std::size_t)n, Mat(d, d));
    out.divS.assign((std::size_t)n, 0.0);
    out.grad_div = Mat(n, d);
    if (M) out.grad_jac_M = Mat(n, d);
    for (int i = 0; i < n; ++i) {
        const double t = X(i, d);
        const Mat A = A_(t);
        const Mat dA = dA_(t);
        double tr = 0.0;
        for (int j = 0; j < d; ++j) {
            double s = 0.0, ds = 0.0;
            for (int k = 0; k < d; ++k) {
                s += A(j, k) * X(i, k);
                ds += dA(j, k) * X(i, k);
                out.jac[(std::size_t)i](j, k) = -A(j, k);
            }
            out.S(i, j) = -s;
            out.dtS(i, j) = -ds;
            tr += A(j, j);
        }
        out.divS[(std::size_t)i] = -tr;
    }
    return out;
}

AnalyticGaussianLl::AnalyticGaussianLl(int d, MatrixFn C, MatrixFn dC_dt)
    : d_(d), C_(std::move(C)), dC_(std::move(dC_dt)) {}

ScalarFieldPack AnalyticGaussianLl::pack(const Mat& X, const Mat* M) const {
    const int n = X.rows;
    const int d = d_;
    ScalarFieldPack out;
    out.q.assign((std::size_t)n, 0.0);
    out.dtq.assign((std::size_t)n, 0.0);
    out.grad = Mat(n, d);
    if (M) out.hess_contract.assign((std::size_t)n, 0.0);
    for (int i = 0; i < n; ++i) {
        const double t = X(i, d);
        const Mat C = C_(t);
        const Mat dC = dC_(t);
        const Mat Cinv = inverse(C);
        std::vector<double> x(d);
        for (int k = 0; k < d; ++k) x[k] = X(i, k);
        std::vector<double> cix(d, 0.0);
        for (int r = 0; r < d; ++r)
            for (int k = 0; k < d; ++k) cix[r] += Cinv(r, k) * x[k];
        double quad = 0.0;
        for (int r = 0; r < d; ++r) quad += x[r] * cix[r];
        out.q[(std::size_t)i] =
            -0.5 * d * std::log(TWO_PI) - 0.5 * logdet_spd(C) - 0.5 * quad;
        // d/dt: -1/2 tr(C^{-1} Cdot) + 1/2 x^T C^{-1} Cdot C^{-1} x
        double trterm = 0.0;
        for (int r = 0; r < d; ++r)
            for (int k = 0; k < d; ++k) trterm += Cinv(r, k) * dC(k, r);
        double quadterm = 0.0;
        for (int r = 0; r < d; ++r)
            for (int k = 0; k < d; ++k) quadterm += cix[r] * dC(r, k) * cix[k];
        out.dtq[(std::size_t)i] = -0.5 * trterm + 0.5 * quadterm;
        for (int r = 0; r < d; ++r) out.grad(i, r) = -cix[r];
        if (M) {
            double hc = 0.0;
            for (int r = 0; r < d; ++r)
                for (int k = 0; k < d; ++k) hc += (*M)(r, k) * Cinv(k, r);
            out.hess_contract[(std::size_t)i] = -hc;
        }
    }
    return out;
}

} // namespace fsde
