#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>

#include "masstlab/curvature.hpp"
#include "masstlab/losses.hpp"
#include "support/oracles.hpp"

using namespace masstlab;

namespace {

// Quadratic 1/2 theta^T A theta: the gradient is A theta and the Hessian is A.
GradFn quadratic_grad(const Matrix& a) {
  return [a](const Vector& theta) {
    Vector g(theta.size(), 0.0);
    for (int i = 0; i < a.rows; ++i)
      for (int j = 0; j < a.cols; ++j) g[i] += a(i, j) * theta[j];
    return g;
  };
}

Matrix diag3(double d0, double d1, double d2) {
  Matrix a(3, 3);
  a(0, 0) = d0;
  a(1, 1) = d1;
  a(2, 2) = d2;
  return a;
}

// A fixed small embedding-loss instance used as a nonquadratic landscape.
struct TinyLoss {
  EmbeddingNet net = make_net({6, 8, 4}, Activation::Tanh, 33);
  Matrix batch;
  PrototypeSet protos;
  LossConfig cfg;

  TinyLoss() {
    Rng rng(12);
    batch = Matrix(4, 6);
    for (auto& x : batch.data) x = rng.uniform(-1.0, 1.0);
    Matrix raw(4, 4);
    for (auto& x : raw.data) x = rng.normal();
    protos.positives = l2norm_rows(raw);
    protos.positive_ids = {0, 1, 2, 3};
    protos.negatives = Matrix(0, 4);
    cfg.scale = 8.0;
  }

  GradFn grad() {
    return [this](const Vector& theta) {
      EmbeddingNet scratch = net;
      load_params(scratch, theta);
      const ForwardTrace trace = forward_trace(scratch, batch);
      const CrossEntropyResult ce =
          cross_entropy(make_logits(trace.features, protos.positive_ids, protos, cfg));
      return backward(scratch, trace, ce.d_features);
    };
  }
};

}  // namespace

TEST_CASE("hvp reproduces a quadratic Hessian") {
  Rng rng(1);
  Matrix a(5, 5);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j <= i; ++j) {
      const double v = rng.uniform(-2.0, 2.0);
      a(i, j) = v;
      a(j, i) = v;
    }
  const GradFn grad = quadratic_grad(a);
  Vector theta(5), v(5);
  for (auto& x : theta) x = rng.uniform(-1.0, 1.0);
  for (auto& x : v) x = rng.uniform(-1.0, 1.0);

  const Vector hv = hvp(grad, theta, v);
  Vector want(5, 0.0);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j) want[i] += a(i, j) * v[j];
  for (int i = 0; i < 5; ++i)
    CHECK(hv[i] == doctest::Approx(want[i]).epsilon(1e-6));

  // Linear in v.
  Vector v3 = v;
  for (auto& x : v3) x *= 3.0;
  const Vector hv3 = hvp(grad, theta, v3);
  for (int i = 0; i < 5; ++i)
    CHECK(hv3[i] == doctest::Approx(3.0 * hv[i]).epsilon(1e-6));

  CHECK_THROWS_AS(hvp(grad, theta, Vector(5, 0.0)), Error);
}

TEST_CASE("hvp matches the dense Hessian on the tiny net") {
  TinyLoss tiny;
  const GradFn grad = tiny.grad();
  const Matrix h = oracles::dense_hessian(grad, tiny.net.theta, 1e-5);

  Rng rng(2);
  Vector v(tiny.net.theta.size());
  for (auto& x : v) x = rng.normal();
  const Vector hv = hvp(grad, tiny.net.theta, v);
  Vector want(v.size(), 0.0);
  for (int i = 0; i < h.rows; ++i)
    for (int j = 0; j < h.cols; ++j) want[i] += h(i, j) * v[j];

  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    num += (hv[i] - want[i]) * (hv[i] - want[i]);
    den += want[i] * want[i];
  }
  CHECK(std::sqrt(num / den) <= 1e-3);
}

TEST_CASE("hvp is symmetric as a quadratic form") {
  TinyLoss tiny;
  const GradFn grad = tiny.grad();
  Rng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    Vector u(tiny.net.theta.size()), v(tiny.net.theta.size());
    for (auto& x : u) x = rng.normal();
    for (auto& x : v) x = rng.normal();
    const double uhv = dot(u, hvp(grad, tiny.net.theta, v));
    const double vhu = dot(v, hvp(grad, tiny.net.theta, u));
    CHECK(std::abs(uhv - vhu) / (std::abs(uhv) + 1e-12) <= 1e-4);
  }
}

TEST_CASE("power iteration finds the top eigenvalue of diag(1,2,5)") {
  PowerIterConfig cfg;  // thr 1e-3, max 50
  cfg.seed = 4;
  const PowerIterResult res = power_iteration(quadratic_grad(diag3(1, 2, 5)), Vector(3, 0.2), cfg);
  CHECK(res.converged);
  CHECK(res.iters <= 50);
  CHECK(std::abs(res.lambda_max - 5.0) <= 1e-3);
  CHECK(res.rayleigh > 0.0);
}

TEST_CASE("power iteration matches the Jacobi oracle on random symmetric quadratics") {
  Rng rng(5);
  for (int trial = 0; trial < 5; ++trial) {
    const Matrix a = oracles::gapped_symmetric(10, rng);
    const double want = oracles::top_abs_eigenvalue(a);
    PowerIterConfig cfg;
    cfg.seed = 100 + trial;
    const PowerIterResult res = power_iteration(quadratic_grad(a), Vector(10, 0.1), cfg);
    CHECK(std::abs(res.lambda_max - want) / want <= 1e-3);
  }
}

TEST_CASE("power iteration matches the dense Hessian on the tiny net") {
  TinyLoss tiny;
  const GradFn grad = tiny.grad();
  const Matrix h = oracles::dense_hessian(grad, tiny.net.theta, 1e-5);
  const double want = oracles::top_abs_eigenvalue(h);
  PowerIterConfig cfg;
  cfg.seed = 6;
  const PowerIterResult res = power_iteration(grad, tiny.net.theta, cfg);
  CHECK(std::abs(res.lambda_max - want) / want <= 0.02);
}

TEST_CASE("power iteration is seed-invariant on a gapped spectrum") {
  Rng rng(7);
  const Matrix a = oracles::gapped_symmetric(12, rng, nullptr, 0.9);
  PowerIterConfig cfg;
  std::vector<double> estimates;
  for (int seed = 0; seed < 10; ++seed) {
    cfg.seed = seed;
    estimates.push_back(power_iteration(quadratic_grad(a), Vector(12, 0.1), cfg).lambda_max);
  }
  for (double e : estimates)
    CHECK(std::abs(e - estimates.front()) <= 2.0 * cfg.thr);
}

TEST_CASE("a flat landscape reports zero curvature") {
  const GradFn zero = [](const Vector& theta) { return Vector(theta.size(), 0.0); };
  PowerIterConfig cfg;
  cfg.seed = 8;
  const PowerIterResult res = power_iteration(zero, Vector(6, 0.5), cfg);
  CHECK(res.converged);
  CHECK(res.lambda_max == 0.0);
}

TEST_CASE("degenerate directions resample once and then fail") {
  // HVP calls 1 and 3 see a stiff linear gradient, calls 2 and 4 a flat one:
  // the estimate jumps, collapses, resamples, jumps, collapses again.
  int grad_calls = 0;
  const GradFn flaky = [&grad_calls](const Vector& theta) {
    ++grad_calls;
    const int hvp_index = (grad_calls + 1) / 2;
    if (hvp_index % 2 == 1) {
      Vector g(theta.size());
      for (std::size_t i = 0; i < theta.size(); ++i) g[i] = 100.0 * theta[i];
      return g;
    }
    return Vector(theta.size(), 0.0);
  };
  PowerIterConfig cfg;
  cfg.seed = 9;
  CHECK_THROWS_AS(power_iteration(flaky, Vector(4, 0.1), cfg), Error);
}

TEST_CASE("curvature trace summary statistics") {
  // Repeated probes of one fixed quadratic make a flat trace.
  const Matrix a = diag3(1, 2, 5);
  CurvatureTrace trace;
  for (int p = 0; p < 6; ++p) {
    PowerIterConfig cfg;
    cfg.seed = 40 + p;
    const PowerIterResult r = power_iteration(quadratic_grad(a), Vector(3, 0.2), cfg);
    trace.points.push_back({p + 1, r.lambda_max, r.rayleigh, r.iters});
  }
  CHECK(trace.avg() == doctest::Approx(5.0).epsilon(1e-3));
  CHECK(trace.sd() < 1e-3);

  // A constant loss function yields an all-zero trace.
  const GradFn zero = [](const Vector& theta) { return Vector(theta.size(), 0.0); };
  CurvatureTrace flat;
  for (int p = 0; p < 4; ++p) {
    PowerIterConfig cfg;
    cfg.seed = 50 + p;
    const PowerIterResult r = power_iteration(zero, Vector(5, 0.1), cfg);
    flat.points.push_back({p + 1, r.lambda_max, r.rayleigh, r.iters});
  }
  CHECK(flat.avg() == 0.0);
  CHECK(flat.sd() == 0.0);
}

TEST_CASE("curvature csv carries the summary comment") {
  CurvatureTrace trace;
  trace.points.push_back({40, 2.0, 2.0, 7});
  trace.points.push_back({80, 4.0, -4.0, 9});
  std::ostringstream out;
  write_curvature_csv(trace, out);
  CHECK(out.str() ==
        "iter,lambda_max,rayleigh,power_iters\n"
        "40,2,2,7\n"
        "80,4,-4,9\n"
        "# avg=3 sd=1\n");
}

TEST_CASE("psi values and regional monotonicity") {
  CHECK(psi(0.0) == 0.25);
  CHECK(psi(std::log(3.0)) == doctest::Approx(0.1875).epsilon(1e-12));
  for (double c = 0.0; c <= 10.0; c += 0.37) CHECK(psi(c) == psi(-c));

  double prev = psi(-10.0);
  for (double c = -10.0 + 1e-3; c < 0.0; c += 1e-3) {
    const double cur = psi(c);
    CHECK(cur > prev);  // strictly increasing left of zero
    prev = cur;
  }
  prev = psi(0.0);
  for (double c = 1e-3; c <= 10.0; c += 1e-3) {
    const double cur = psi(c);
    CHECK(cur < prev);  // strictly decreasing right of zero
    prev = cur;
  }
}

TEST_CASE("lipschitz probe stays under the bound") {
  const EmbeddingNet gallery = make_net({8, 12, 6}, Activation::Tanh, 21);
  const EmbeddingNet probe = make_net({8, 12, 6}, Activation::Tanh, 22);
  Rng rng(10);
  Matrix samples(16, 8);
  for (auto& x : samples.data) x = rng.uniform(-1.0, 1.0);

  const LipschitzProbeResult res = lipschitz_probe(gallery, probe, samples, 30.0, 500, Rng(11));
  CHECK(res.bound == doctest::Approx(450.0));
  CHECK(res.ratios.size() > 0);
  for (double r : res.ratios) CHECK(r <= 450.0 + 1e-6);
  CHECK(res.max_ratio <= 450.0 + 1e-6);
}

TEST_CASE("single-class probe has identically zero gradient variation") {
  const EmbeddingNet gallery = make_net({8, 12, 6}, Activation::Tanh, 23);
  const EmbeddingNet probe = make_net({8, 12, 6}, Activation::Tanh, 24);
  Rng rng(12);
  Matrix samples(1, 8);  // one sample: a positive and no negatives
  for (auto& x : samples.data) x = rng.uniform(-1.0, 1.0);
  const LipschitzProbeResult res = lipschitz_probe(gallery, probe, samples, 30.0, 50, Rng(13));
  for (double r : res.ratios) CHECK(r == 0.0);
}
