#pragma once

#include <unordered_map>
#include <vector>

#include "fsde/mat.hpp"

namespace fsde {

// Eager computation graph over batched matrices with reverse-mode autodiff.
// backward() emits its adjoint computations as new graph nodes, so results
// of one backward pass can be differentiated again - the mechanism behind
// the second-order input derivatives in the PDE residual losses.
//
// Rows are batch points. All ops except the explicit reductions/broadcasts
// act row-locally, so the gradient of a batch-summed scalar w.r.t. an input
// leaf has per-point gradients in its rows.
class Graph {
public:
    enum class Op : unsigned char {
        Leaf,
        MatmulNN, MatmulTN, MatmulNT,
        Add, Sub, Mul, Div,
        AddRowvec, MulColvec,
        Scale, AddScalarC,
        Tanh, Sqrt,
        RowSum, ColSum, SumAll,
        SliceCols, PadCols,
        BroadcastCol, BroadcastRow, BroadcastScalar,
        MulScalarNode,
        SmoothL1Mean, SmoothL1Grad, SmoothL1Curv,
    };

    int leaf(Mat v, bool needs_grad);
    int constant(Mat v) { return leaf(std::move(v), false); }
    int scalar_const(double v);

    int matmul(int a, int b);    // A * B
    int matmul_tn(int a, int b); // A^T * B
    int matmul_nt(int a, int b); // A * B^T
    int add(int a, int b);
    int sub(int a, int b);
    int mul(int a, int b);
    int div(int a, int b);
    int add_rowvec(int a, int b); // (n x c) + (1 x c)
    int mul_colvec(int a, int v); // (n x c) * (n x 1)
    int scale(int a, double s);
    int add_scalar(int a, double c);
    int tanh_(int a);
    int sqrt_(int a);
    int rowsum(int a);
    int colsum(int a);
    int sum_all(int a);
    int mean_all(int a);
    int slice_cols(int a, int c0, int c1);
    int pad_cols(int a, int c0, int total);
    int broadcast_col(int a, int cols);
    int broadcast_row(int a, int rows);
    int broadcast_scalar(int a, int rows, int cols);
    int mul_scalar_node(int a, int s);
    // mean over all entries of rho(x); rho(e) = e^2 below beta, 2*beta*|e| - beta^2
    // above; beta = +inf gives the plain mean of squares
    int smooth_l1_mean(int a, double beta);

    const Mat& val(int id) const { return nodes_[(std::size_t)id].v; }
    bool requires_grad(int id) const { return nodes_[(std::size_t)id].needs_grad; }
    std::size_t size() const { return nodes_.size(); }

    // Gradients of a 1x1 node w.r.t. the given nodes. Entry is -1 when the
    // output does not depend on that node. Emitted as graph nodes, so they
    // can be differentiated again.
    std::vector<int> backward(int out, const std::vector<int>& wrt);

    // Drop all nodes, recycling value buffers.
    void clear();

private:
    struct Node {
        Op op;
        int a = -1, b = -1;
        double c0 = 0.0;
        int i0 = 0, i1 = 0;
        bool needs_grad = false;
        Mat v;
    };

    int push(Op op, int a, int b, int rows, int cols, double c0 = 0.0,
             int i0 = 0, int i1 = 0);
    void eval(Node& n);
    Mat alloc(int r, int c);
    void recycle(Mat& m);

    std::vector<Node> nodes_;
    std::unordered_map<std::size_t, std::vector<std::vector<double>>> pool_;
};

} // namespace fsde
