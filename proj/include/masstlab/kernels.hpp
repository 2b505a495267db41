#pragma once

namespace masstlab::kernels {

// Thread cap for the parallel kernels. Initialized once from the
// MASSTLAB_THREADS environment variable (default 1); can be overridden
// programmatically, e.g. by benchmarks.
int thread_count();
void set_thread_count(int n);

// Dense kernels used by the forward/backward passes. The dispatching entry
// points pick the parallel variant when it pays off; both variants compute
// every output element with the same serial reduction order, so results are
// identical bit for bit at any thread count.

// C(m x n) = A(m x k) * B(n x k)^T
void gemm_nt(const double* a, const double* b, double* c, int m, int n, int k);
// C(m x n) = A(m x k) * B(k x n)
void gemm_nn(const double* a, const double* b, double* c, int m, int n, int k);
// C(m x n) = A(k x m)^T * B(k x n)
void gemm_tn(const double* a, const double* b, double* c, int m, int n, int k);

// Single-threaded reference implementations.
namespace serial {
void gemm_nt(const double* a, const double* b, double* c, int m, int n, int k);
void gemm_nn(const double* a, const double* b, double* c, int m, int n, int k);
void gemm_tn(const double* a, const double* b, double* c, int m, int n, int k);
}  // namespace serial

// OpenMP variants, parallel over output rows.
namespace parallel {
void gemm_nt(const double* a, const double* b, double* c, int m, int n, int k);
void gemm_nn(const double* a, const double* b, double* c, int m, int n, int k);
void gemm_tn(const double* a, const double* b, double* c, int m, int n, int k);
}  // namespace parallel

}  // namespace masstlab::kernels
