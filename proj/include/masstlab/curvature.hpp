#pragma once

#include <functional>
#include <ostream>
#include <vector>

#include "masstlab/embedmodel.hpp"
#include "masstlab/rng.hpp"

namespace masstlab {

struct PowerIterConfig {
  double thr = 1e-3;   // stop when the eigenvalue estimate moves less than this
  int max_iters = 50;  // iteration cap
  std::uint64_t seed = 0;

  void validate() const;
};

struct PowerIterResult {
  double lambda_max = 0.0;  // magnitude of the principal eigenvalue estimate
  double rayleigh = 0.0;    // v^T H v at the final step; carries the sign
  int iters = 0;
  bool converged = false;
};

using GradFn = std::function<Vector(const Vector&)>;

// Hessian-vector product by central differencing of the gradient:
//   H v ~= (g(theta + eps v^) - g(theta - eps v^)) / (2 eps) * ||v||
// with v^ = v/||v|| and eps = sqrt(machine epsilon) * (1 + ||theta||).
// Two gradient evaluations and O(q) memory, no second-order tape.
Vector hvp(const GradFn& grad, const Vector& theta, const Vector& v);

// Matrix-free principal-eigenvalue estimate: start from a random unit v,
// repeat { w = Hv; lambda = ||w||; v = w/||w|| } until the change in lambda
// drops below thr or the cap is reached. If ||Hv|| collapses below 1e-12
// mid-run the start vector is resampled once; a second collapse is an error.
PowerIterResult power_iteration(const GradFn& grad, const Vector& theta, const PowerIterConfig& cfg);

struct CurvatureTrace {
  struct Point {
    long iter;
    double lambda;
    double rayleigh;
    int power_iters;
  };
  std::vector<Point> points;

  double avg() const;
  double sd() const;  // population standard deviation
};

// Columns iter,lambda_max,rayleigh,power_iters plus a trailing
// "# avg=<v> sd=<v>" comment row.
void write_curvature_csv(const CurvatureTrace& trace, std::ostream& out);

// Psi(c) = 1 / (e^c + e^-c + 2): even, peaks at Psi(0) = 1/4, and strictly
// monotone on each side of zero. Governs how the gradient-variation ratio
// responds to prototype perturbations.
double psi(double c);

struct LipschitzProbeResult {
  std::vector<double> ratios;
  double max_ratio = 0.0;
  double bound = 0.0;  // s^2 / 2
};

// Empirical check of the gradient-variation bound. Samples are embedded by
// both networks; each trial perturbs one gallery feature, recomputes the
// prototype-gradient eta = s * (p_y - 1) * x_p against the remaining gallery
// features as negatives, and records ||eta - eta'|| / ||x_g - x_g'||.
// Degenerate pairs (x_g' == x_g) are skipped.
LipschitzProbeResult lipschitz_probe(const EmbeddingNet& gallery_net, const EmbeddingNet& probe_net,
                                     const Matrix& samples, double scale, int num_perturbations,
                                     Rng rng);

}  // namespace masstlab
