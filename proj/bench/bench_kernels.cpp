// Times the serial reference kernels against the OpenMP variants and checks
// that they agree bit for bit. Sizes bracket what the training loop actually
// runs (batch x hidden matmuls) plus one larger case where threading pays.

#include <chrono>
#include <cstdio>
#include <vector>

#include "masstlab/kernels.hpp"
#include "masstlab/rng.hpp"

using masstlab::Rng;
namespace kernels = masstlab::kernels;

namespace {

using KernelFn = void (*)(const double*, const double*, double*, int, int, int);

double time_ms(KernelFn fn, const std::vector<double>& a, const std::vector<double>& b,
               std::vector<double>& c, int m, int n, int k, int reps) {
  const auto start = std::chrono::steady_clock::now();
  for (int r = 0; r < reps; ++r) fn(a.data(), b.data(), c.data(), m, n, k);
  const auto end = std::chrono::steady_clock::now();
  return std::chrono::duration<double, std::milli>(end - start).count() / reps;
}

}  // namespace

int main() {
  struct Case {
    const char* name;
    int m, n, k;
    int reps;
  };
  const Case cases[] = {
      {"batch-forward 32x64x64", 32, 64, 64, 2000},
      {"logits 32x544x16", 32, 544, 16, 2000},
      {"grad 64x64x512", 64, 64, 512, 500},
      {"large 512x512x512", 512, 512, 512, 10},
  };

  struct Variant {
    const char* name;
    KernelFn serial;
    KernelFn parallel;
  };
  const Variant variants[] = {
      {"gemm_nt", kernels::serial::gemm_nt, kernels::parallel::gemm_nt},
      {"gemm_nn", kernels::serial::gemm_nn, kernels::parallel::gemm_nn},
      {"gemm_tn", kernels::serial::gemm_tn, kernels::parallel::gemm_tn},
  };

  kernels::set_thread_count(4);
  std::printf("%-10s %-24s %12s %12s %8s %s\n", "kernel", "case", "serial(ms)", "omp(ms)",
              "speedup", "bitwise");
  int mismatches = 0;
  for (const auto& variant : variants) {
    for (const auto& c : cases) {
      Rng rng(17);
      std::vector<double> a(static_cast<std::size_t>(c.m) * c.k);
      std::vector<double> b(static_cast<std::size_t>(c.k) * c.n);
      for (auto& x : a) x = rng.uniform(-1.0, 1.0);
      for (auto& x : b) x = rng.uniform(-1.0, 1.0);
      std::vector<double> out_serial(static_cast<std::size_t>(c.m) * c.n);
      std::vector<double> out_parallel(out_serial.size());

      const double ts = time_ms(variant.serial, a, b, out_serial, c.m, c.n, c.k, c.reps);
      const double tp = time_ms(variant.parallel, a, b, out_parallel, c.m, c.n, c.k, c.reps);
      const bool same = out_serial == out_parallel;
      if (!same) ++mismatches;
      std::printf("%-10s %-24s %12.3f %12.3f %7.2fx %s\n", variant.name, c.name, ts, tp, ts / tp,
                  same ? "ok" : "MISMATCH");
    }
  }
  return mismatches == 0 ? 0 : 1;
}
