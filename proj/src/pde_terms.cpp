#include "fsde/pde_terms.hpp"

#include <cmath>

namespace fsde::pdeterms {

Mat with_time_column(const Mat& x, const std::vector<double>& t) {
    if ((std::size_t)x.rows != t.size()) throw ShapeError("batch: |t| != rows");
    Mat X(x.rows, x.cols + 1);
    for (int i = 0; i < x.rows; ++i) {
        for (int c = 0; c < x.cols; ++c) X(i, c) = x(i, c);
        X(i, x.cols) = t[(std::size_t)i];
    }
    return X;
}

int emit_constrained_score(Graph& g, const Mlp& net, const MlpNodes& p, int x,
                           int xd, int tcol, const std::optional<Mat>& constraint) {
    int S = mlp_emit(g, net, p, x);
    if (constraint)
        S = g.sub(g.mul_colvec(S, tcol),
                  g.matmul(xd, g.constant(transpose(*constraint))));
    return S;
}

DriftNodes emit_drift(Graph& g, const SdeSpec& spec, int xd) {
    DriftNodes out;
    const int d = spec.d;
    switch (spec.drift) {
        case DriftTag::Zero: break;
        case DriftTag::Linear: {
            out.f = g.scale(xd, -1.0);
            Mat c(g.val(xd).rows, 1);
            c.fill(-(double)d);
            out.divf = g.constant(std::move(c));
            break;
        }
        case DriftTag::LinearOverAlpha: {
            out.f = g.scale(xd, -1.0 / spec.levy_alpha);
            Mat c(g.val(xd).rows, 1);
            c.fill(-(double)d / spec.levy_alpha);
            out.divf = g.constant(std::move(c));
            break;
        }
        case DriftTag::TanhRadial: {
            const double sd = std::sqrt((double)d);
            const int r2 = g.rowsum(g.mul(xd, xd));
            const int u = g.scale(g.sqrt_(r2), 1.0 / sd);
            const int th = g.tanh_(u);
            out.f = g.mul_colvec(xd, g.scale(th, -1.0));
            const int sech2 = g.add_scalar(g.scale(g.mul(th, th), -1.0), 1.0);
            out.divf = g.sub(g.scale(th, -(double)d), g.mul(u, sech2));
            break;
        }
        case DriftTag::Polynomial: {
            const int r2 = g.rowsum(g.mul(xd, xd));
            const int one_m_r2 = g.add_scalar(g.scale(r2, -1.0), 1.0);
            out.f = g.mul_colvec(xd, one_m_r2);
            out.divf = g.sub(g.scale(one_m_r2, (double)d), g.scale(r2, 2.0));
            break;
        }
    }
    return out;
}

int emit_mv(Graph& g, const SdeSpec& spec, int v, int tcol) {
    switch (spec.diffusion) {
        case DiffusionTag::Zero: return -1;
        case DiffusionTag::Identity: return v;
        case DiffusionTag::BPlusTI: {
            const Mat bbt = matmul_nt(spec.B, spec.B);
            Mat bpb = spec.B;
            for (int i = 0; i < spec.B.rows; ++i)
                for (int j = 0; j < spec.B.cols; ++j) bpb(i, j) += spec.B(j, i);
            const int t2 = g.mul(tcol, tcol);
            int out = g.matmul(v, g.constant(bbt)); // B B^T symmetric
            out = g.add(out, g.mul_colvec(g.matmul(v, g.constant(bpb)), tcol));
            return g.add(out, g.mul_colvec(v, t2));
        }
    }
    throw NumericError("unreachable");
}

int emit_t1(Graph& g, const SdeSpec& spec, const std::vector<int>& comp_grads,
            int tcol, int d) {
    if (spec.diffusion == DiffusionTag::Zero) return -1;
    int t2 = -1;
    Mat bbt, bpb;
    if (spec.diffusion == DiffusionTag::BPlusTI) {
        bbt = matmul_nt(spec.B, spec.B);
        bpb = spec.B;
        for (int i = 0; i < spec.B.rows; ++i)
            for (int j = 0; j < spec.B.cols; ++j) bpb(i, j) += spec.B(j, i);
        t2 = g.mul(tcol, tcol);
    }
    int acc = -1;
    auto accum = [&](int node) { acc = acc < 0 ? node : g.add(acc, node); };
    for (int j = 0; j < d; ++j) {
        const int gx = g.slice_cols(comp_grads[(std::size_t)j], 0, d);
        if (spec.diffusion == DiffusionTag::Identity) {
            accum(g.slice_cols(gx, j, j + 1));
        } else {
            Mat col0(d, 1), col1(d, 1);
            for (int i = 0; i < d; ++i) {
                col0(i, 0) = bbt(i, j);
                col1(i, 0) = bpb(i, j);
            }
            accum(g.matmul(gx, g.constant(col0)));
            accum(g.mul(g.matmul(gx, g.constant(col1)), tcol));
            accum(g.mul(g.slice_cols(gx, j, j + 1), t2));
        }
    }
    return acc;
}

} // namespace fsde::pdeterms
