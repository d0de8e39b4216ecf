#pragma once

#include <cstddef>
#include <initializer_list>
#include <vector>

#include "fsde/common.hpp"

namespace fsde {

// Dense row-major matrix of doubles. All project arithmetic is 64-bit.
struct Mat {
    int rows = 0, cols = 0;
    std::vector<double> a;

    Mat() = default;
    Mat(int r, int c) : rows(r), cols(c), a((std::size_t)r * c, 0.0) {}
    Mat(int r, int c, std::initializer_list<double> v) : rows(r), cols(c), a(v) {
        if ((std::size_t)r * c != a.size()) throw ShapeError("Mat init size mismatch");
    }

    double& operator()(int r, int c) { return a[(std::size_t)r * cols + c]; }
    double operator()(int r, int c) const { return a[(std::size_t)r * cols + c]; }
    double* row(int r) { return a.data() + (std::size_t)r * cols; }
    const double* row(int r) const { return a.data() + (std::size_t)r * cols; }
    std::size_t size() const { return a.size(); }
    bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }
    void fill(double v) { std::fill(a.begin(), a.end(), v); }
};

Mat matmul(const Mat& A, const Mat& B);            // A * B
Mat matmul_tn(const Mat& A, const Mat& B);         // A^T * B
Mat matmul_nt(const Mat& A, const Mat& B);         // A * B^T
Mat transpose(const Mat& A);
Mat identity(int d);

// Frobenius norm and plain helpers used all over the tests.
double fro_norm(const Mat& A);
double max_abs(const Mat& A);

// Solve A x = b for square A by partial-pivot LU; throws NumericError if singular.
std::vector<double> solve_lu(Mat A, std::vector<double> b);

// Inverse via LU; for the small (d <= 20) covariance matrices.
Mat inverse(const Mat& A);

// Cholesky factor L (lower) of an SPD matrix; throws NumericError if not SPD.
Mat cholesky(const Mat& A);

// log(det(A)) for SPD A via Cholesky.
double logdet_spd(const Mat& A);

// Symmetric eigendecomposition by cyclic Jacobi rotations: A = Q diag(w) Q^T.
// Columns of Q are eigenvectors; eigenvalues ascending.
void eig_sym(const Mat& A, Mat& Q, std::vector<double>& w);

// QR of a square matrix with the R diagonal forced nonnegative, making the
// orthogonal factor unique (used to generate reproducible random rotations).
void qr_orthonormal(const Mat& A, Mat& Q);

} // namespace fsde
