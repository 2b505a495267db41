#include "masstlab/curvature.hpp"

#include <cmath>
#include <limits>

#include "masstlab/textio.hpp"

namespace masstlab {

namespace {

constexpr double kDegenerate = 1e-12;

Vector random_unit_vector(std::size_t n, Rng& rng) {
  Vector v(n);
  for (double& x : v) x = rng.normal();
  const double nrm = norm2(v);
  scale(v, 1.0 / nrm);
  return v;
}

}  // namespace

void PowerIterConfig::validate() const {
  if (!(thr > 0.0)) throw ConfigError("curvature: thr must be positive");
  if (max_iters < 1) throw ConfigError("curvature: max iterations must be >= 1");
}

Vector hvp(const GradFn& grad, const Vector& theta, const Vector& v) {
  const double vnorm = norm2(v);
  if (!(vnorm > 0.0)) throw Error("curvature: hvp direction has zero norm");
  const double eps =
      std::sqrt(std::numeric_limits<double>::epsilon()) * (1.0 + norm2(theta));

  Vector shifted(theta.size());
  for (std::size_t i = 0; i < theta.size(); ++i) shifted[i] = theta[i] + eps * v[i] / vnorm;
  Vector gp = grad(shifted);
  for (std::size_t i = 0; i < theta.size(); ++i) shifted[i] = theta[i] - eps * v[i] / vnorm;
  const Vector gm = grad(shifted);
  check_finite(gp, "curvature: gradient at shifted point");
  check_finite(gm, "curvature: gradient at shifted point");

  const double coef = vnorm / (2.0 * eps);
  for (std::size_t i = 0; i < gp.size(); ++i) gp[i] = (gp[i] - gm[i]) * coef;
  return gp;
}

PowerIterResult power_iteration(const GradFn& grad, const Vector& theta,
                                const PowerIterConfig& cfg) {
  cfg.validate();
  Rng rng = Rng(cfg.seed).stream("power_v");
  Vector v = random_unit_vector(theta.size(), rng);

  PowerIterResult res;
  double lambda_prev = 0.0;
  bool resampled = false;
  for (int k = 1; k <= cfg.max_iters; ++k) {
    const Vector w = hvp(grad, theta, v);
    const double lambda = norm2(w);
    res.lambda_max = lambda;
    res.rayleigh = dot(v, w);
    res.iters = k;
    if (std::abs(lambda - lambda_prev) < cfg.thr) {
      res.converged = true;
      return res;
    }
    if (lambda < kDegenerate) {
      // v landed in a (near-)null direction of a non-flat landscape.
      if (resampled) throw Error("curvature: power iteration degenerate after resampling");
      resampled = true;
      v = random_unit_vector(theta.size(), rng);
      lambda_prev = 0.0;
      continue;
    }
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = w[i] / lambda;
    lambda_prev = lambda;
  }
  return res;
}

double CurvatureTrace::avg() const {
  if (points.empty()) return 0.0;
  double s = 0.0;
  for (const auto& p : points) s += p.lambda;
  return s / static_cast<double>(points.size());
}

double CurvatureTrace::sd() const {
  if (points.empty()) return 0.0;
  const double mean = avg();
  double s = 0.0;
  for (const auto& p : points) s += (p.lambda - mean) * (p.lambda - mean);
  return std::sqrt(s / static_cast<double>(points.size()));
}

void write_curvature_csv(const CurvatureTrace& trace, std::ostream& out) {
  out << "iter,lambda_max,rayleigh,power_iters\n";
  for (const auto& p : trace.points)
    out << p.iter << ',' << fmt_g17(p.lambda) << ',' << fmt_g17(p.rayleigh) << ','
        << p.power_iters << '\n';
  out << "# avg=" << fmt_g17(trace.avg()) << " sd=" << fmt_g17(trace.sd()) << '\n';
}

double psi(double c) { return 1.0 / (std::exp(c) + std::exp(-c) + 2.0); }

LipschitzProbeResult lipschitz_probe(const EmbeddingNet& gallery_net, const EmbeddingNet& probe_net,
                                     const Matrix& samples, double scale, int num_perturbations,
                                     Rng rng) {
  if (samples.rows < 1) throw Error("curvature: lipschitz probe needs at least one sample");
  const Matrix gallery_feats = forward(gallery_net, samples);
  const Matrix probe_feats = forward(probe_net, samples);
  const int n = samples.rows;
  const int dim = gallery_feats.cols;

  LipschitzProbeResult res;
  res.bound = scale * scale / 2.0;
  res.ratios.reserve(num_perturbations);

  // log-sum-exp of s * x_j . x_p over the negative pool, extended by one
  // positive term; numerically safe for s around 30.
  const auto softmax_prob = [&](double pos_logit, const std::vector<double>& neg_logits) {
    double mx = pos_logit;
    for (double l : neg_logits) mx = std::max(mx, l);
    double denom = std::exp(pos_logit - mx);
    for (double l : neg_logits) denom += std::exp(l - mx);
    return std::exp(pos_logit - mx) / denom;
  };

  for (int t = 0; t < num_perturbations; ++t) {
    const int idx = rng.below(n);
    const auto xg = gallery_feats.row(idx);
    const auto xp = probe_feats.row(idx);

    // Perturb the gallery feature and put it back on the sphere.
    Vector perturbed(xg.begin(), xg.end());
    const double mag = rng.uniform(1e-4, 0.5);
    for (int j = 0; j < dim; ++j) perturbed[j] += mag * rng.normal();
    const Vector xg2 = l2_normalize(perturbed);

    double denom_dist = distance2(xg, xg2);
    if (denom_dist == 0.0) continue;  // degenerate pair, nothing to measure

    std::vector<double> neg_logits;
    neg_logits.reserve(n - 1);
    for (int j = 0; j < n; ++j) {
      if (j == idx) continue;
      neg_logits.push_back(scale * dot(gallery_feats.row(j), xp));
    }

    const double f1 = softmax_prob(scale * dot(xg, xp), neg_logits) - 1.0;
    const double f2 = softmax_prob(scale * dot(xg2, xp), neg_logits) - 1.0;
    // ||eta - eta'|| = s |f - f'| ||x_p|| and x_p is unit.
    const double ratio = scale * std::abs(f1 - f2) / denom_dist;
    res.ratios.push_back(ratio);
    res.max_ratio = std::max(res.max_ratio, ratio);
  }
  return res;
}

}  // namespace masstlab
