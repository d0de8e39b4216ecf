#pragma once

#include <cstddef>

// Hot inner loops, each with a serial reference and an OpenMP variant.
// Both variants produce bit-identical results for any thread count:
// every output element (or fixed-size chunk partial) is computed by a
// single serial loop, and combination orders are fixed.

namespace fsde::kernels {

enum class Mode { Serial, Parallel };

void set_mode(Mode m);
Mode mode();

void set_threads(int n); // caps OpenMP threads; <=0 restores default
int threads();

// C (m x n) = op(A) * op(B); row-major, C preallocated and overwritten.
// ta/tb: false = as-is, true = transposed operand.
void gemm(bool ta, bool tb, int m, int n, int k,
          const double* A, int lda,
          const double* B, int ldb,
          double* C, int ldc);

// y[i] = f applied elementwise; serial/parallel over i.
void tanh_inplace(double* x, std::size_t n);

// Deterministic sum: fixed 4096-element chunk partials combined in order.
double sum(const double* x, std::size_t n);

// out[r] = sum of row r (row-major rows x cols).
void row_sums(const double* x, int rows, int cols, double* out);

// out[c] = sum of column c.
void col_sums(const double* x, int rows, int cols, double* out);

} // namespace fsde::kernels
