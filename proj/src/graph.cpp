#include "fsde/graph.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "fsde/kernels.hpp"

namespace fsde {

namespace {
inline void check_same(const Mat& a, const Mat& b, const char* what) {
    if (!a.same_shape(b)) throw ShapeError(std::string(what) + ": shape mismatch");
}
} // namespace

Mat Graph::alloc(int r, int c) {
    const std::size_t need = (std::size_t)r * c;
    Mat m;
    m.rows = r;
    m.cols = c;
    auto it = pool_.find(need);
    if (it != pool_.end() && !it->second.empty()) {
        m.a = std::move(it->second.back());
        it->second.pop_back();
        std::fill(m.a.begin(), m.a.end(), 0.0);
    } else {
        m.a.assign(need, 0.0);
    }
    return m;
}

void Graph::recycle(Mat& m) {
    if (!m.a.empty()) pool_[m.a.size()].push_back(std::move(m.a));
    m.rows = m.cols = 0;
}

void Graph::clear() {
    for (auto& n : nodes_) recycle(n.v);
    nodes_.clear();
}

int Graph::leaf(Mat v, bool needs_grad) {
    Node n;
    n.op = Op::Leaf;
    n.needs_grad = needs_grad;
    n.v = std::move(v);
    nodes_.push_back(std::move(n));
    return (int)nodes_.size() - 1;
}

int Graph::scalar_const(double v) {
    Mat m(1, 1);
    m.a[0] = v;
    return leaf(std::move(m), false);
}

int Graph::push(Op op, int a, int b, int rows, int cols, double c0, int i0, int i1) {
    Node n;
    n.op = op;
    n.a = a;
    n.b = b;
    n.c0 = c0;
    n.i0 = i0;
    n.i1 = i1;
    n.needs_grad = (a >= 0 && nodes_[(std::size_t)a].needs_grad) ||
                   (b >= 0 && nodes_[(std::size_t)b].needs_grad);
    n.v = alloc(rows, cols);
    eval(n);
    nodes_.push_back(std::move(n));
    return (int)nodes_.size() - 1;
}

int Graph::matmul(int a, int b) {
    const Mat& A = val(a); const Mat& B = val(b);
    if (A.cols != B.rows) throw ShapeError("graph matmul: inner dims");
    return push(Op::MatmulNN, a, b, A.rows, B.cols);
}
int Graph::matmul_tn(int a, int b) {
    const Mat& A = val(a); const Mat& B = val(b);
    if (A.rows != B.rows) throw ShapeError("graph matmul_tn: inner dims");
    return push(Op::MatmulTN, a, b, A.cols, B.cols);
}
int Graph::matmul_nt(int a, int b) {
    const Mat& A = val(a); const Mat& B = val(b);
    if (A.cols != B.cols) throw ShapeError("graph matmul_nt: inner dims");
    return push(Op::MatmulNT, a, b, A.rows, B.rows);
}
int Graph::add(int a, int b) {
    check_same(val(a), val(b), "graph add");
    return push(Op::Add, a, b, val(a).rows, val(a).cols);
}
int Graph::sub(int a, int b) {
    check_same(val(a), val(b), "graph sub");
    return push(Op::Sub, a, b, val(a).rows, val(a).cols);
}
int Graph::mul(int a, int b) {
    check_same(val(a), val(b), "graph mul");
    return push(Op::Mul, a, b, val(a).rows, val(a).cols);
}
int Graph::div(int a, int b) {
    check_same(val(a), val(b), "graph div");
    return push(Op::Div, a, b, val(a).rows, val(a).cols);
}
int Graph::add_rowvec(int a, int b) {
    const Mat& A = val(a); const Mat& B = val(b);
    if (B.rows != 1 || B.cols != A.cols) throw ShapeError("graph add_rowvec");
    return push(Op::AddRowvec, a, b, A.rows, A.cols);
}
int Graph::mul_colvec(int a, int v) {
    const Mat& A = val(a); const Mat& V = val(v);
    if (V.cols != 1 || V.rows != A.rows) throw ShapeError("graph mul_colvec");
    return push(Op::MulColvec, a, v, A.rows, A.cols);
}
int Graph::scale(int a, double s) { return push(Op::Scale, a, -1, val(a).rows, val(a).cols, s); }
int Graph::add_scalar(int a, double c) { return push(Op::AddScalarC, a, -1, val(a).rows, val(a).cols, c); }
int Graph::tanh_(int a) { return push(Op::Tanh, a, -1, val(a).rows, val(a).cols); }
int Graph::sqrt_(int a) { return push(Op::Sqrt, a, -1, val(a).rows, val(a).cols); }
int Graph::rowsum(int a) { return push(Op::RowSum, a, -1, val(a).rows, 1); }
int Graph::colsum(int a) { return push(Op::ColSum, a, -1, 1, val(a).cols); }
int Graph::sum_all(int a) { return push(Op::SumAll, a, -1, 1, 1); }
int Graph::mean_all(int a) {
    return scale(sum_all(a), 1.0 / (double)val(a).size());
}
int Graph::slice_cols(int a, int c0, int c1) {
    const Mat& A = val(a);
    if (c0 < 0 || c1 > A.cols || c0 >= c1) throw ShapeError("graph slice_cols");
    return push(Op::SliceCols, a, -1, A.rows, c1 - c0, 0.0, c0, c1);
}
int Graph::pad_cols(int a, int c0, int total) {
    const Mat& A = val(a);
    if (c0 < 0 || c0 + A.cols > total) throw ShapeError("graph pad_cols");
    return push(Op::PadCols, a, -1, A.rows, total, 0.0, c0, total);
}
int Graph::broadcast_col(int a, int cols) {
    if (val(a).cols != 1) throw ShapeError("graph broadcast_col");
    return push(Op::BroadcastCol, a, -1, val(a).rows, cols, 0.0, cols);
}
int Graph::broadcast_row(int a, int rows) {
    if (val(a).rows != 1) throw ShapeError("graph broadcast_row");
    return push(Op::BroadcastRow, a, -1, rows, val(a).cols, 0.0, rows);
}
int Graph::broadcast_scalar(int a, int rows, int cols) {
    if (val(a).size() != 1) throw ShapeError("graph broadcast_scalar");
    return push(Op::BroadcastScalar, a, -1, rows, cols, 0.0, rows, cols);
}
int Graph::mul_scalar_node(int a, int s) {
    if (val(s).size() != 1) throw ShapeError("graph mul_scalar_node");
    return push(Op::MulScalarNode, a, s, val(a).rows, val(a).cols);
}
int Graph::smooth_l1_mean(int a, double beta) {
    if (beta < 0.0) throw ConfigError("smooth_l1_mean: beta must be >= 0");
    return push(Op::SmoothL1Mean, a, -1, 1, 1, beta);
}

void Graph::eval(Node& n) {
    const Mat* A = n.a >= 0 ? &nodes_[(std::size_t)n.a].v : nullptr;
    const Mat* B = n.b >= 0 ? &nodes_[(std::size_t)n.b].v : nullptr;
    Mat& o = n.v;
    switch (n.op) {
        case Op::Leaf: break;
        case Op::MatmulNN:
            kernels::gemm(false, false, A->rows, B->cols, A->cols, A->a.data(),
                          A->cols, B->a.data(), B->cols, o.a.data(), o.cols);
            break;
        case Op::MatmulTN:
            kernels::gemm(true, false, A->cols, B->cols, A->rows, A->a.data(),
                          A->cols, B->a.data(), B->cols, o.a.data(), o.cols);
            break;
        case Op::MatmulNT:
            kernels::gemm(false, true, A->rows, B->rows, A->cols, A->a.data(),
                          A->cols, B->a.data(), B->cols, o.a.data(), o.cols);
            break;
        case Op::Add:
            for (std::size_t i = 0; i < o.size(); ++i) o.a[i] = A->a[i] + B->a[i];
            break;
        case Op::Sub:
            for (std::size_t i = 0; i < o.size(); ++i) o.a[i] = A->a[i] - B->a[i];
            break;
        case Op::Mul:
            for (std::size_t i = 0; i < o.size(); ++i) o.a[i] = A->a[i] * B->a[i];
            break;
        case Op::Div:
            for (std::size_t i = 0; i < o.size(); ++i) o.a[i] = A->a[i] / B->a[i];
            break;
        case Op::AddRowvec:
            for (int r = 0; r < o.rows; ++r)
                for (int c = 0; c < o.cols; ++c)
                    o(r, c) = (*A)(r, c) + B->a[(std::size_t)c];
            break;
        case Op::MulColvec:
            for (int r = 0; r < o.rows; ++r) {
                const double s = B->a[(std::size_t)r];
                for (int c = 0; c < o.cols; ++c) o(r, c) = (*A)(r, c) * s;
            }
            break;
        case Op::Scale:
            for (std::size_t i = 0; i < o.size(); ++i) o.a[i] = A->a[i] * n.c0;
            break;
        case Op::AddScalarC:
            for (std::size_t i = 0; i < o.size(); ++i) o.a[i] = A->a[i] + n.c0;
            break;
        case Op::Tanh:
            std::copy(A->a.begin(), A->a.end(), o.a.begin());
            kernels::tanh_inplace(o.a.data(), o.size());
            break;
        case Op::Sqrt:
            for (std::size_t i = 0; i < o.size(); ++i) o.a[i] = std::sqrt(A->a[i]);
            break;
        case Op::RowSum:
            kernels::row_sums(A->a.data(), A->rows, A->cols, o.a.data());
            break;
        case Op::ColSum:
            kernels::col_sums(A->a.data(), A->rows, A->cols, o.a.data());
            break;
        case Op::SumAll:
            o.a[0] = kernels::sum(A->a.data(), A->size());
            break;
        case Op::SliceCols:
            for (int r = 0; r < o.rows; ++r)
                for (int c = 0; c < o.cols; ++c) o(r, c) = (*A)(r, n.i0 + c);
            break;
        case Op::PadCols:
            for (int r = 0; r < o.rows; ++r)
                for (int c = 0; c < A->cols; ++c) o(r, n.i0 + c) = (*A)(r, c);
            break;
        case Op::BroadcastCol:
            for (int r = 0; r < o.rows; ++r) {
                const double s = A->a[(std::size_t)r];
                for (int c = 0; c < o.cols; ++c) o(r, c) = s;
            }
            break;
        case Op::BroadcastRow:
            for (int r = 0; r < o.rows; ++r)
                for (int c = 0; c < o.cols; ++c) o(r, c) = A->a[(std::size_t)c];
            break;
        case Op::BroadcastScalar:
            o.fill(A->a[0]);
            break;
        case Op::MulScalarNode: {
            const double s = B->a[0];
            for (std::size_t i = 0; i < o.size(); ++i) o.a[i] = A->a[i] * s;
            break;
        }
        case Op::SmoothL1Mean: {
            const double beta = n.c0;
            const bool pure_l2 = !std::isfinite(beta);
            double s = 0.0;
            for (std::size_t i = 0; i < A->size(); ++i) {
                const double e = A->a[i];
                const double ae = std::fabs(e);
                s += (pure_l2 || ae < beta) ? e * e : 2.0 * beta * ae - beta * beta;
            }
            o.a[0] = s / (double)A->size();
            break;
        }
        case Op::SmoothL1Grad: {
            const double beta = n.c0;
            const bool pure_l2 = !std::isfinite(beta);
            const double lim = 2.0 * beta;
            for (std::size_t i = 0; i < A->size(); ++i) {
                const double g = 2.0 * A->a[i];
                o.a[i] = pure_l2 ? g : std::clamp(g, -lim, lim);
            }
            break;
        }
        case Op::SmoothL1Curv: {
            const double beta = n.c0;
            const bool pure_l2 = !std::isfinite(beta);
            for (std::size_t i = 0; i < A->size(); ++i)
                o.a[i] = (pure_l2 || std::fabs(A->a[i]) < beta) ? 2.0 : 0.0;
            break;
        }
    }
}

std::vector<int> Graph::backward(int out, const std::vector<int>& wrt) {
    if (val(out).size() != 1) throw ShapeError("backward: output must be 1x1");

    // relevance: descendants of any wrt node, up to `out`
    std::vector<char> rel(nodes_.size(), 0);
    for (int w : wrt) rel[(std::size_t)w] = 1;
    for (int id = 0; id <= out; ++id) {
        const Node& n = nodes_[(std::size_t)id];
        if (rel[(std::size_t)id]) continue;
        if ((n.a >= 0 && rel[(std::size_t)n.a]) || (n.b >= 0 && rel[(std::size_t)n.b]))
            rel[(std::size_t)id] = 1;
    }
    // ancestry: nodes the output actually depends on
    std::vector<char> anc(nodes_.size(), 0);
    anc[(std::size_t)out] = 1;
    for (int id = out; id >= 0; --id) {
        if (!anc[(std::size_t)id]) continue;
        const Node& n = nodes_[(std::size_t)id];
        if (n.a >= 0) anc[(std::size_t)n.a] = 1;
        if (n.b >= 0) anc[(std::size_t)n.b] = 1;
    }

    std::vector<int> adj(nodes_.size(), -1);
    adj[(std::size_t)out] = scalar_const(1.0);

    auto accum = [&](int target, int g) {
        if (adj[(std::size_t)target] < 0) adj[(std::size_t)target] = g;
        else adj[(std::size_t)target] = add(adj[(std::size_t)target], g);
    };

    for (int id = out; id >= 0; --id) {
        if (!anc[(std::size_t)id] || !rel[(std::size_t)id]) continue;
        const int g = adj[(std::size_t)id];
        if (g < 0) continue;
        // snapshot fields: emitting adjoint ops reallocates nodes_
        const Op op = nodes_[(std::size_t)id].op;
        const int a = nodes_[(std::size_t)id].a;
        const int b = nodes_[(std::size_t)id].b;
        const double c0 = nodes_[(std::size_t)id].c0;
        const int i0 = nodes_[(std::size_t)id].i0;
        const bool ra = a >= 0 && rel[(std::size_t)a];
        const bool rb = b >= 0 && rel[(std::size_t)b];
        const int arows = a >= 0 ? val(a).rows : 0;
        const int acols = a >= 0 ? val(a).cols : 0;

        switch (op) {
            case Op::Leaf: break;
            case Op::MatmulNN:
                if (ra) accum(a, matmul_nt(g, b));
                if (rb) accum(b, matmul_tn(a, g));
                break;
            case Op::MatmulTN:
                if (ra) accum(a, matmul_nt(b, g));
                if (rb) accum(b, matmul(a, g));
                break;
            case Op::MatmulNT:
                if (ra) accum(a, matmul(g, b));
                if (rb) accum(b, matmul_tn(g, a));
                break;
            case Op::Add:
                if (ra) accum(a, g);
                if (rb) accum(b, g);
                break;
            case Op::Sub:
                if (ra) accum(a, g);
                if (rb) accum(b, scale(g, -1.0));
                break;
            case Op::Mul:
                if (ra) accum(a, mul(g, b));
                if (rb) accum(b, mul(g, a));
                break;
            case Op::Div:
                if (ra) accum(a, div(g, b));
                if (rb) accum(b, scale(mul(div(g, b), id), -1.0));
                break;
            case Op::AddRowvec:
                if (ra) accum(a, g);
                if (rb) accum(b, colsum(g));
                break;
            case Op::MulColvec:
                if (ra) accum(a, mul_colvec(g, b));
                if (rb) accum(b, rowsum(mul(g, a)));
                break;
            case Op::Scale:
                if (ra) accum(a, scale(g, c0));
                break;
            case Op::AddScalarC:
                if (ra) accum(a, g);
                break;
            case Op::Tanh:
                if (ra) {
                    const int y2 = mul(id, id);
                    const int om = add_scalar(scale(y2, -1.0), 1.0);
                    accum(a, mul(g, om));
                }
                break;
            case Op::Sqrt:
                if (ra) accum(a, div(scale(g, 0.5), id));
                break;
            case Op::RowSum:
                if (ra) accum(a, broadcast_col(g, acols));
                break;
            case Op::ColSum:
                if (ra) accum(a, broadcast_row(g, arows));
                break;
            case Op::SumAll:
                if (ra) accum(a, broadcast_scalar(g, arows, acols));
                break;
            case Op::SliceCols:
                if (ra) accum(a, pad_cols(g, i0, acols));
                break;
            case Op::PadCols:
                if (ra) accum(a, slice_cols(g, i0, i0 + acols));
                break;
            case Op::BroadcastCol:
                if (ra) accum(a, rowsum(g));
                break;
            case Op::BroadcastRow:
                if (ra) accum(a, colsum(g));
                break;
            case Op::BroadcastScalar:
                if (ra) accum(a, sum_all(g));
                break;
            case Op::MulScalarNode:
                if (ra) accum(a, mul_scalar_node(g, b));
                if (rb) accum(b, sum_all(mul(g, a)));
                break;
            case Op::SmoothL1Mean:
                if (ra) {
                    const int gr = push(Op::SmoothL1Grad, a, -1, arows, acols, c0);
                    accum(a, scale(mul_scalar_node(gr, g),
                                   1.0 / ((double)arows * acols)));
                }
                break;
            case Op::SmoothL1Grad:
                if (ra) {
                    const int cv = push(Op::SmoothL1Curv, a, -1, arows, acols, c0);
                    accum(a, mul(g, cv));
                }
                break;
            case Op::SmoothL1Curv:
                break; // piecewise constant
        }
    }

    std::vector<int> out_grads(wrt.size(), -1);
    for (std::size_t i = 0; i < wrt.size(); ++i) out_grads[i] = adj[(std::size_t)wrt[i]];
    return out_grads;
}

} // namespace fsde
