#include "fsde/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace fsde::kernels {

namespace {
Mode g_mode = Mode::Parallel;
int g_threads = 0; // 0 = OpenMP default

inline bool par() { return g_mode == Mode::Parallel; }
} // namespace

void set_mode(Mode m) { g_mode = m; }
Mode mode() { return g_mode; }

void set_threads(int n) {
    g_threads = n > 0 ? n : 0;
#ifdef _OPENMP
    if (g_threads > 0) omp_set_num_threads(g_threads);
#endif
}

int threads() {
#ifdef _OPENMP
    return g_threads > 0 ? g_threads : omp_get_max_threads();
#else
    return 1;
#endif
}

namespace {

// Row i of C is accumulated serially in k order, so the result does not
// depend on how rows are distributed over threads.
void gemm_nn(int m, int n, int k, const double* A, int lda,
             const double* B, int ldb, double* C, int ldc, bool p) {
#pragma omp parallel for schedule(static) if (p)
    for (int i = 0; i < m; ++i) {
        double* ci = C + (std::size_t)i * ldc;
        std::fill(ci, ci + n, 0.0);
        const double* ai = A + (std::size_t)i * lda;
        for (int l = 0; l < k; ++l) {
            const double a = ai[l];
            const double* bl = B + (std::size_t)l * ldb;
            for (int j = 0; j < n; ++j) ci[j] += a * bl[j];
        }
    }
}

void gemm_tn(int m, int n, int k, const double* A, int lda,
             const double* B, int ldb, double* C, int ldc, bool p) {
    // C[i,j] = sum_l A[l,i] * B[l,j]
#pragma omp parallel for schedule(static) if (p)
    for (int i = 0; i < m; ++i) {
        double* ci = C + (std::size_t)i * ldc;
        std::fill(ci, ci + n, 0.0);
        for (int l = 0; l < k; ++l) {
            const double a = A[(std::size_t)l * lda + i];
            const double* bl = B + (std::size_t)l * ldb;
            for (int j = 0; j < n; ++j) ci[j] += a * bl[j];
        }
    }
}

void gemm_nt(int m, int n, int k, const double* A, int lda,
             const double* B, int ldb, double* C, int ldc, bool p) {
    // C[i,j] = dot(A row i, B row j)
#pragma omp parallel for schedule(static) if (p)
    for (int i = 0; i < m; ++i) {
        const double* ai = A + (std::size_t)i * lda;
        double* ci = C + (std::size_t)i * ldc;
        for (int j = 0; j < n; ++j) {
            const double* bj = B + (std::size_t)j * ldb;
            double s = 0.0;
            for (int l = 0; l < k; ++l) s += ai[l] * bj[l];
            ci[j] = s;
        }
    }
}

void gemm_tt(int m, int n, int k, const double* A, int lda,
             const double* B, int ldb, double* C, int ldc, bool p) {
    // C[i,j] = sum_l A[l,i] * B[j,l]
#pragma omp parallel for schedule(static) if (p)
    for (int i = 0; i < m; ++i) {
        double* ci = C + (std::size_t)i * ldc;
        for (int j = 0; j < n; ++j) {
            const double* bj = B + (std::size_t)j * ldb;
            double s = 0.0;
            for (int l = 0; l < k; ++l) s += A[(std::size_t)l * lda + i] * bj[l];
            ci[j] = s;
        }
    }
}

} // namespace

void gemm(bool ta, bool tb, int m, int n, int k,
          const double* A, int lda, const double* B, int ldb,
          double* C, int ldc) {
    const bool p = par();
    if (!ta && !tb) gemm_nn(m, n, k, A, lda, B, ldb, C, ldc, p);
    else if (ta && !tb) gemm_tn(m, n, k, A, lda, B, ldb, C, ldc, p);
    else if (!ta && tb) gemm_nt(m, n, k, A, lda, B, ldb, C, ldc, p);
    else gemm_tt(m, n, k, A, lda, B, ldb, C, ldc, p);
}

void tanh_inplace(double* x, std::size_t n) {
    const bool p = par();
#pragma omp parallel for schedule(static) if (p && n > 2048)
    for (long long i = 0; i < (long long)n; ++i) x[i] = std::tanh(x[i]);
}

double sum(const double* x, std::size_t n) {
    constexpr std::size_t chunk = 4096;
    const std::size_t nchunks = (n + chunk - 1) / chunk;
    if (nchunks <= 1) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += x[i];
        return s;
    }
    std::vector<double> partial(nchunks);
    const bool p = par();
#pragma omp parallel for schedule(static) if (p)
    for (long long c = 0; c < (long long)nchunks; ++c) {
        const std::size_t lo = (std::size_t)c * chunk;
        const std::size_t hi = std::min(n, lo + chunk);
        double s = 0.0;
        for (std::size_t i = lo; i < hi; ++i) s += x[i];
        partial[(std::size_t)c] = s;
    }
    double s = 0.0;
    for (double v : partial) s += v; // fixed combine order
    return s;
}

void row_sums(const double* x, int rows, int cols, double* out) {
    const bool p = par();
#pragma omp parallel for schedule(static) if (p && rows > 64)
    for (int r = 0; r < rows; ++r) {
        const double* xr = x + (std::size_t)r * cols;
        double s = 0.0;
        for (int c = 0; c < cols; ++c) s += xr[c];
        out[r] = s;
    }
}

void col_sums(const double* x, int rows, int cols, double* out) {
    // each column accumulated serially in row order
    const bool p = par();
#pragma omp parallel for schedule(static) if (p && cols > 8)
    for (int c = 0; c < cols; ++c) {
        double s = 0.0;
        for (int r = 0; r < rows; ++r) s += x[(std::size_t)r * cols + c];
        out[c] = s;
    }
}

} // namespace fsde::kernels
