#pragma once

#include "kiwi/tensor.hpp"

namespace kiwi::kernels {

// Dense double-precision kernels used by every model forward/backward pass.
// Each kernel has a plain serial reference implementation and an
// OpenMP-parallel counterpart; the dispatching entry points pick the
// parallel path for work sizes above a small cutoff. tests/ checks both
// paths against each other, bench/ compares their throughput.

// C[m,n] = A[m,k] * B[k,n]
void matmul_serial(const double* a, const double* b, double* c,
                   int64_t m, int64_t k, int64_t n);
void matmul_omp(const double* a, const double* b, double* c,
                int64_t m, int64_t k, int64_t n);

// C[m,n] = A[m,k] * B[n,k]^T
void matmul_nt_serial(const double* a, const double* b, double* c,
                      int64_t m, int64_t k, int64_t n);
void matmul_nt_omp(const double* a, const double* b, double* c,
                   int64_t m, int64_t k, int64_t n);

// C[k,n] += A[m,k]^T * B[m,n]   (accumulating; used by backward passes)
void matmul_tn_acc_serial(const double* a, const double* b, double* c,
                          int64_t m, int64_t k, int64_t n);
void matmul_tn_acc_omp(const double* a, const double* b, double* c,
                       int64_t m, int64_t k, int64_t n);

// Row-wise softmax in place over an (m,n) matrix.
void softmax_rows_serial(double* x, int64_t m, int64_t n);
void softmax_rows_omp(double* x, int64_t m, int64_t n);

// Dispatching wrappers over Tensor.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor matmul_nt(const Tensor& a, const Tensor& b);
void matmul_tn_acc(const Tensor& a, const Tensor& b, Tensor& c);
void softmax_rows(Tensor& x);

// Force-serial switch, mainly for determinism experiments in tests.
void set_parallel(bool on);
bool parallel_enabled();

} // namespace kiwi::kernels
