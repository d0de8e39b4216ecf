#include "fsde/mat.hpp"

#include <algorithm>
#include <cmath>

#include "fsde/kernels.hpp"

namespace fsde {

Mat matmul(const Mat& A, const Mat& B) {
    if (A.cols != B.rows) throw ShapeError("matmul: inner dims differ");
    Mat C(A.rows, B.cols);
    kernels::gemm(false, false, A.rows, B.cols, A.cols, A.a.data(), A.cols,
                  B.a.data(), B.cols, C.a.data(), C.cols);
    return C;
}

Mat matmul_tn(const Mat& A, const Mat& B) {
    if (A.rows != B.rows) throw ShapeError("matmul_tn: inner dims differ");
    Mat C(A.cols, B.cols);
    kernels::gemm(true, false, A.cols, B.cols, A.rows, A.a.data(), A.cols,
                  B.a.data(), B.cols, C.a.data(), C.cols);
    return C;
}

Mat matmul_nt(const Mat& A, const Mat& B) {
    if (A.cols != B.cols) throw ShapeError("matmul_nt: inner dims differ");
    Mat C(A.rows, B.rows);
    kernels::gemm(false, true, A.rows, B.rows, A.cols, A.a.data(), A.cols,
                  B.a.data(), B.cols, C.a.data(), C.cols);
    return C;
}

Mat transpose(const Mat& A) {
    Mat T(A.cols, A.rows);
    for (int r = 0; r < A.rows; ++r)
        for (int c = 0; c < A.cols; ++c) T(c, r) = A(r, c);
    return T;
}

Mat identity(int d) {
    Mat I(d, d);
    for (int i = 0; i < d; ++i) I(i, i) = 1.0;
    return I;
}

double fro_norm(const Mat& A) {
    double s = 0.0;
    for (double v : A.a) s += v * v;
    return std::sqrt(s);
}

double max_abs(const Mat& A) {
    double m = 0.0;
    for (double v : A.a) m = std::max(m, std::fabs(v));
    return m;
}

std::vector<double> solve_lu(Mat A, std::vector<double> b) {
    const int n = A.rows;
    if (A.cols != n || (int)b.size() != n) throw ShapeError("solve_lu: bad shapes");
    std::vector<int> piv(n);
    for (int i = 0; i < n; ++i) piv[i] = i;
    for (int k = 0; k < n; ++k) {
        int p = k;
        double best = std::fabs(A(k, k));
        for (int i = k + 1; i < n; ++i) {
            const double v = std::fabs(A(i, k));
            if (v > best) { best = v; p = i; }
        }
        if (best == 0.0) throw NumericError("solve_lu: singular matrix");
        if (p != k) {
            for (int c = 0; c < n; ++c) std::swap(A(k, c), A(p, c));
            std::swap(b[k], b[p]);
        }
        for (int i = k + 1; i < n; ++i) {
            const double f = A(i, k) / A(k, k);
            A(i, k) = f;
            for (int c = k + 1; c < n; ++c) A(i, c) -= f * A(k, c);
            b[i] -= f * b[k];
        }
    }
    for (int i = n - 1; i >= 0; --i) {
        double s = b[i];
        for (int c = i + 1; c < n; ++c) s -= A(i, c) * b[c];
        b[i] = s / A(i, i);
    }
    return b;
}

Mat inverse(const Mat& A) {
    const int n = A.rows;
    Mat inv(n, n);
    for (int j = 0; j < n; ++j) {
        std::vector<double> e(n, 0.0);
        e[j] = 1.0;
        auto col = solve_lu(A, std::move(e));
        for (int i = 0; i < n; ++i) inv(i, j) = col[i];
    }
    return inv;
}

Mat cholesky(const Mat& A) {
    const int n = A.rows;
    if (A.cols != n) throw ShapeError("cholesky: not square");
    Mat L(n, n);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j <= i; ++j) {
            double s = A(i, j);
            for (int k = 0; k < j; ++k) s -= L(i, k) * L(j, k);
            if (i == j) {
                if (s <= 0.0) throw NumericError("cholesky: matrix not SPD");
                L(i, i) = std::sqrt(s);
            } else {
                L(i, j) = s / L(j, j);
            }
        }
    }
    return L;
}

double logdet_spd(const Mat& A) {
    Mat L = cholesky(A);
    double s = 0.0;
    for (int i = 0; i < A.rows; ++i) s += std::log(L(i, i));
    return 2.0 * s;
}

void eig_sym(const Mat& A, Mat& Q, std::vector<double>& w) {
    const int n = A.rows;
    if (A.cols != n) throw ShapeError("eig_sym: not square");
    Mat S = A;
    Q = identity(n);
    // cyclic Jacobi sweeps
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (int p = 0; p < n; ++p)
            for (int q = p + 1; q < n; ++q) off += S(p, q) * S(p, q);
        if (off < 1e-26) break;
        for (int p = 0; p < n - 1; ++p) {
            for (int q = p + 1; q < n; ++q) {
                const double apq = S(p, q);
                if (std::fabs(apq) < 1e-300) continue;
                const double theta = (S(q, q) - S(p, p)) / (2.0 * apq);
                const double t = (theta >= 0 ? 1.0 : -1.0) /
                                 (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (int k = 0; k < n; ++k) {
                    const double skp = S(k, p), skq = S(k, q);
                    S(k, p) = c * skp - s * skq;
                    S(k, q) = s * skp + c * skq;
                }
                for (int k = 0; k < n; ++k) {
                    const double spk = S(p, k), sqk = S(q, k);
                    S(p, k) = c * spk - s * sqk;
                    S(q, k) = s * spk + c * sqk;
                }
                for (int k = 0; k < n; ++k) {
                    const double qkp = Q(k, p), qkq = Q(k, q);
                    Q(k, p) = c * qkp - s * qkq;
                    Q(k, q) = s * qkp + c * qkq;
                }
            }
        }
    }
    w.resize(n);
    for (int i = 0; i < n; ++i) w[i] = S(i, i);
    // sort ascending, permuting eigenvector columns alongside
    std::vector<int> idx(n);
    for (int i = 0; i < n; ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(), [&](int x, int y) { return w[x] < w[y]; });
    std::vector<double> ws(n);
    Mat Qs(n, n);
    for (int j = 0; j < n; ++j) {
        ws[j] = w[idx[j]];
        for (int i = 0; i < n; ++i) Qs(i, j) = Q(i, idx[j]);
    }
    w = std::move(ws);
    Q = std::move(Qs);
}

void qr_orthonormal(const Mat& A, Mat& Q) {
    const int n = A.rows;
    if (A.cols != n) throw ShapeError("qr_orthonormal: not square");
    // modified Gram-Schmidt; columns of A assumed generic (random Gaussian)
    Mat V = A;
    Q = Mat(n, n);
    Mat R(n, n);
    for (int j = 0; j < n; ++j) {
        std::vector<double> v(n);
        for (int i = 0; i < n; ++i) v[i] = V(i, j);
        for (int k = 0; k < j; ++k) {
            double dot = 0.0;
            for (int i = 0; i < n; ++i) dot += Q(i, k) * v[i];
            R(k, j) = dot;
            for (int i = 0; i < n; ++i) v[i] -= dot * Q(i, k);
        }
        double nrm = 0.0;
        for (int i = 0; i < n; ++i) nrm += v[i] * v[i];
        nrm = std::sqrt(nrm);
        if (nrm == 0.0) throw NumericError("qr_orthonormal: rank deficient input");
        // R(j,j) = nrm > 0 by construction, so Q is the unique factor with
        // positive R diagonal.
        R(j, j) = nrm;
        for (int i = 0; i < n; ++i) Q(i, j) = v[i] / nrm;
    }
}

} // namespace fsde
