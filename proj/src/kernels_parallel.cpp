#include "masstlab/kernels.hpp"

// Same loop bodies as the serial reference; only the row loop is split
// across threads. Each output element keeps its serial reduction order.

namespace masstlab::kernels::parallel {

void gemm_nt(const double* a, const double* b, double* c, int m, int n, int k) {
  const int nt = thread_count();
#pragma omp parallel for schedule(static) num_threads(nt)
  for (int i = 0; i < m; ++i) {
    const double* ai = a + static_cast<long>(i) * k;
    double* ci = c + static_cast<long>(i) * n;
    for (int j = 0; j < n; ++j) {
      const double* bj = b + static_cast<long>(j) * k;
      double s = 0.0;
      for (int l = 0; l < k; ++l) s += ai[l] * bj[l];
      ci[j] = s;
    }
  }
}

void gemm_nn(const double* a, const double* b, double* c, int m, int n, int k) {
  const int nt = thread_count();
#pragma omp parallel for schedule(static) num_threads(nt)
  for (int i = 0; i < m; ++i) {
    const double* ai = a + static_cast<long>(i) * k;
    double* ci = c + static_cast<long>(i) * n;
    for (int j = 0; j < n; ++j) {
      double s = 0.0;
      for (int l = 0; l < k; ++l) s += ai[l] * b[static_cast<long>(l) * n + j];
      ci[j] = s;
    }
  }
}

void gemm_tn(const double* a, const double* b, double* c, int m, int n, int k) {
  const int nt = thread_count();
#pragma omp parallel for schedule(static) num_threads(nt)
  for (int i = 0; i < m; ++i) {
    double* ci = c + static_cast<long>(i) * n;
    for (int j = 0; j < n; ++j) {
      double s = 0.0;
      for (int l = 0; l < k; ++l) s += a[static_cast<long>(l) * m + i] * b[static_cast<long>(l) * n + j];
      ci[j] = s;
    }
  }
}

}  // namespace masstlab::kernels::parallel
