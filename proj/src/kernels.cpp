#include "masstlab/kernels.hpp"

#include <atomic>
#include <cstdlib>

namespace masstlab::kernels {

namespace {

int env_thread_count() {
  const char* env = std::getenv("MASSTLAB_THREADS");
  if (env == nullptr) return 1;
  const int n = std::atoi(env);
  return n > 0 ? n : 1;
}

std::atomic<int> g_threads{0};  // 0 = not yet initialized

// Below this many multiply-adds the fork/join overhead dominates.
constexpr long kParallelCutoff = 32768;

bool use_parallel(int m, int n, int k) {
  return thread_count() > 1 && m > 1 && static_cast<long>(m) * n * k >= kParallelCutoff;
}

}  // namespace

int thread_count() {
  int n = g_threads.load(std::memory_order_relaxed);
  if (n == 0) {
    n = env_thread_count();
    g_threads.store(n, std::memory_order_relaxed);
  }
  return n;
}

void set_thread_count(int n) { g_threads.store(n > 0 ? n : 1, std::memory_order_relaxed); }

void gemm_nt(const double* a, const double* b, double* c, int m, int n, int k) {
  if (use_parallel(m, n, k))
    parallel::gemm_nt(a, b, c, m, n, k);
  else
    serial::gemm_nt(a, b, c, m, n, k);
}

void gemm_nn(const double* a, const double* b, double* c, int m, int n, int k) {
  if (use_parallel(m, n, k))
    parallel::gemm_nn(a, b, c, m, n, k);
  else
    serial::gemm_nn(a, b, c, m, n, k);
}

void gemm_tn(const double* a, const double* b, double* c, int m, int n, int k) {
  if (use_parallel(m, n, k))
    parallel::gemm_tn(a, b, c, m, n, k);
  else
    serial::gemm_tn(a, b, c, m, n, k);
}

}  // namespace masstlab::kernels
