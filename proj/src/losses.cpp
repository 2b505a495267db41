#include "masstlab/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "masstlab/kernels.hpp"

namespace masstlab {

namespace {

// Clamp applied to cosines before the angle transforms; the arccos
// derivative diverges at the endpoints.
constexpr double kCosClamp = 1.0 - 1e-7;
constexpr double kUnitTol = 1e-6;
constexpr double kPi = 3.14159265358979323846;

void require_unit_rows(const Matrix& m, const char* what) {
  for (int i = 0; i < m.rows; ++i) {
    const double n = norm2(m.row(i));
    if (std::abs(n - 1.0) > kUnitTol)
      throw Error(std::string("losses: ") + what + " row " + std::to_string(i) +
                  " is not unit-norm (|" + std::to_string(n) + " - 1| > 1e-6)");
  }
}

struct Psi {
  double value;
  double slope;  // d psi / d cos
};

// Margin transform for a positive entry. Negatives always use the identity.
Psi positive_psi(double c, const LossConfig& cfg) {
  switch (cfg.kind) {
    case LossKind::Softmax:
      return {c, 1.0};
    case LossKind::AmSoftmax:
      return {c - cfg.effective_margin(), 1.0};
    case LossKind::ArcSoftmax: {
      const double cc = std::clamp(c, -kCosClamp, kCosClamp);
      const double theta = std::acos(cc);
      const double m = cfg.effective_margin();
      return {std::cos(theta + m), std::sin(theta + m) / std::sin(theta)};
    }
    case LossKind::ASoftmax: {
      // psi(theta) = (-1)^k cos(m theta) - 2k on theta in [k pi/m, (k+1) pi/m],
      // the standard monotonic extension of cos(m theta) beyond [0, pi/m].
      const double cc = std::clamp(c, -kCosClamp, kCosClamp);
      const double theta = std::acos(cc);
      const int m = cfg.angular_m;
      int k = static_cast<int>(std::floor(theta * m / kPi));
      k = std::clamp(k, 0, m - 1);
      const double sign = (k % 2 == 0) ? 1.0 : -1.0;
      const double value = sign * std::cos(m * theta) - 2.0 * k;
      const double slope = sign * m * std::sin(m * theta) / std::sin(theta);
      return {value, slope};
    }
  }
  throw Error("losses: unreachable loss kind");
}

}  // namespace

LossKind loss_kind_from_string(std::string_view s) {
  if (s == "softmax") return LossKind::Softmax;
  if (s == "a-softmax") return LossKind::ASoftmax;
  if (s == "am-softmax") return LossKind::AmSoftmax;
  if (s == "arc-softmax") return LossKind::ArcSoftmax;
  throw ConfigError("losses: unknown loss kind '" + std::string(s) + "'");
}

std::string_view to_string(LossKind k) {
  switch (k) {
    case LossKind::Softmax: return "softmax";
    case LossKind::ASoftmax: return "a-softmax";
    case LossKind::AmSoftmax: return "am-softmax";
    case LossKind::ArcSoftmax: return "arc-softmax";
  }
  return "?";
}

double LossConfig::effective_margin() const {
  if (margin >= 0.0) return margin;
  switch (kind) {
    case LossKind::AmSoftmax: return 0.35;
    case LossKind::ArcSoftmax: return 0.5;
    default: return 0.0;
  }
}

void LossConfig::validate() const {
  if (!(scale > 0.0)) throw ConfigError("losses: scale must be positive");
  const double m = effective_margin();
  if (kind == LossKind::AmSoftmax && !(m >= 0.0 && m < 1.0))
    throw ConfigError("losses: am-softmax margin must be in [0, 1)");
  if (kind == LossKind::ArcSoftmax && !(m >= 0.0 && m < kPi / 2.0))
    throw ConfigError("losses: arc-softmax margin must be in [0, pi/2)");
  if (kind == LossKind::ASoftmax && angular_m < 1)
    throw ConfigError("losses: a-softmax angle multiplier must be >= 1");
}

LogitsBundle make_logits(const Matrix& features, std::span<const int> feature_ids,
                         const PrototypeSet& protos, const LossConfig& cfg) {
  cfg.validate();
  if (features.rows != static_cast<int>(feature_ids.size()))
    throw ShapeError("losses: one id per feature row required");
  if (protos.positives.rows != static_cast<int>(protos.positive_ids.size()) ||
      protos.negatives.rows != static_cast<int>(protos.negative_ids.size()))
    throw ShapeError("losses: prototype id count mismatch");
  if (protos.positives.rows == 0) throw ShapeError("losses: no positive prototypes");
  if ((protos.negatives.rows > 0 && protos.negatives.cols != features.cols) ||
      protos.positives.cols != features.cols)
    throw ShapeError("losses: prototype dimension mismatch");
  require_unit_rows(features, "feature");
  require_unit_rows(protos.positives, "positive prototype");
  require_unit_rows(protos.negatives, "negative prototype");

  LogitsBundle b;
  b.scale = cfg.scale;
  b.num_positives = protos.positives.rows;
  b.features = features;
  b.proto_rows = Matrix(protos.positives.rows + protos.negatives.rows, features.cols);
  std::copy(protos.positives.data.begin(), protos.positives.data.end(), b.proto_rows.data.begin());
  std::copy(protos.negatives.data.begin(), protos.negatives.data.end(),
            b.proto_rows.data.begin() + protos.positives.data.size());

  // Each row's label: the unique positive column carrying the row's id.
  b.labels.resize(features.rows);
  for (int i = 0; i < features.rows; ++i) {
    int found = -1;
    for (int j = 0; j < protos.positives.rows; ++j) {
      if (protos.positive_ids[j] == feature_ids[i]) {
        if (found >= 0)
          throw Error("losses: id " + std::to_string(feature_ids[i]) + " appears twice in positives");
        found = j;
      }
    }
    if (found < 0)
      throw Error("losses: no positive prototype for id " + std::to_string(feature_ids[i]));
    b.labels[i] = found;
  }

  b.cosines = Matrix(features.rows, b.proto_rows.rows);
  kernels::gemm_nt(features.data.data(), b.proto_rows.data.data(), b.cosines.data.data(),
                   features.rows, b.proto_rows.rows, features.cols);

  b.logits = Matrix(b.cosines.rows, b.cosines.cols);
  b.dpsi_pos.assign(features.rows, 1.0);
  for (int i = 0; i < b.cosines.rows; ++i) {
    for (int j = 0; j < b.cosines.cols; ++j) {
      if (j == b.labels[i]) {
        const Psi p = positive_psi(b.cosines(i, j), cfg);
        b.logits(i, j) = cfg.scale * p.value;
        b.dpsi_pos[i] = p.slope;
      } else {
        b.logits(i, j) = cfg.scale * b.cosines(i, j);
      }
    }
  }
  return b;
}

CrossEntropyResult cross_entropy(const LogitsBundle& b) {
  check_finite(b.logits, "losses: logits");
  const int rows = b.logits.rows;
  const int cols = b.logits.cols;
  const int batch = rows;

  CrossEntropyResult r;
  r.probs = Matrix(rows, cols);
  double loss_sum = 0.0;
  for (int i = 0; i < rows; ++i) {
    double mx = b.logits(i, 0);
    for (int j = 1; j < cols; ++j) mx = std::max(mx, b.logits(i, j));
    double denom = 0.0;
    for (int j = 0; j < cols; ++j) {
      const double e = std::exp(b.logits(i, j) - mx);
      r.probs(i, j) = e;
      denom += e;
    }
    const double inv = 1.0 / denom;
    for (int j = 0; j < cols; ++j) r.probs(i, j) *= inv;
    loss_sum += -(b.logits(i, b.labels[i]) - mx - std::log(denom));
  }
  r.loss = loss_sum / batch;

  // Upstream through the logits, folding in s * psi'(cos) so one pair of
  // matmuls yields both feature and prototype gradients.
  Matrix upstream(rows, cols);
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) {
      const double dlogit = (r.probs(i, j) - (j == b.labels[i] ? 1.0 : 0.0)) / batch;
      const double slope = (j == b.labels[i]) ? b.dpsi_pos[i] : 1.0;
      upstream(i, j) = dlogit * b.scale * slope;
    }
  }

  r.d_features = Matrix(rows, b.features.cols);
  kernels::gemm_nn(upstream.data.data(), b.proto_rows.data.data(), r.d_features.data.data(), rows,
                   b.features.cols, cols);

  r.d_protos = Matrix(cols, b.features.cols);
  kernels::gemm_tn(upstream.data.data(), b.features.data.data(), r.d_protos.data.data(), cols,
                   b.features.cols, rows);

  r.d_pos_protos = Matrix(rows, b.features.cols);
  for (int i = 0; i < rows; ++i) {
    const double coef = b.scale * b.dpsi_pos[i] * (r.probs(i, b.labels[i]) - 1.0);
    auto dst = r.d_pos_protos.row(i);
    const auto x = b.features.row(i);
    for (int j = 0; j < b.features.cols; ++j) dst[j] = coef * x[j];
  }

  check_finite(r.d_features, "losses: feature gradient");
  return r;
}

std::pair<double, Vector> prototype_norm_reg(std::span<const double> w, double alpha, double beta) {
  if (beta < 0.0) throw ConfigError("losses: prototype regularizer beta must be >= 0");
  if (beta == 0.0) return {0.0, Vector(w.size(), 0.0)};
  const double n = norm2(w);
  if (!(n > 0.0)) throw NormTooSmall("losses: zero-norm prototype in regularizer");
  Vector grad(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) grad[i] = -beta * w[i] / n;
  return {beta * (alpha - n), grad};
}

double network_distance_penalty(double dist, double eps_prime, double weight) {
  if (weight < 0.0) throw ConfigError("losses: network penalty weight must be >= 0");
  return weight * std::max(0.0, dist - eps_prime);
}

}  // namespace masstlab
