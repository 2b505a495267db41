#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "masstlab/diffcore.hpp"
#include "masstlab/losses.hpp"
#include "masstlab/rng.hpp"

using namespace masstlab;

namespace {

Matrix unit_rows(int rows, int cols, Rng& rng) {
  Matrix m(rows, cols);
  for (auto& x : m.data) x = rng.normal();
  return l2norm_rows(m);
}

std::vector<int> iota_ids(int n, int start = 0) {
  std::vector<int> ids(n);
  for (int i = 0; i < n; ++i) ids[i] = start + i;
  return ids;
}

// Features at a chosen cosine against [1, 0].
Matrix vec_at_cos(double c) {
  Matrix m(1, 2);
  m(0, 0) = c;
  m(0, 1) = std::sqrt(1.0 - c * c);
  return m;
}

double rel_err(std::span<const double> got, std::span<const double> want) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < got.size(); ++i) {
    num += (got[i] - want[i]) * (got[i] - want[i]);
    den += want[i] * want[i];
  }
  return std::sqrt(num) / std::max(std::sqrt(den), 1e-12);
}

PrototypeSet random_protos(int positives, int negatives, int dim, Rng& rng) {
  PrototypeSet p;
  p.positives = unit_rows(positives, dim, rng);
  p.positive_ids = iota_ids(positives);
  p.negatives = negatives > 0 ? unit_rows(negatives, dim, rng) : Matrix(0, dim);
  p.negative_ids = iota_ids(negatives, 1000);
  return p;
}

}  // namespace

TEST_CASE("logit arithmetic per kind") {
  Matrix feature(1, 2);
  feature(0, 0) = 1.0;
  feature(0, 1) = 0.0;
  PrototypeSet protos;
  protos.positives = vec_at_cos(0.5);
  protos.positive_ids = {0};
  protos.negatives = vec_at_cos(0.5);
  protos.negative_ids = {7};
  const std::vector<int> ids = {0};

  LossConfig cfg;
  cfg.kind = LossKind::Softmax;
  cfg.scale = 30.0;
  LogitsBundle b = make_logits(feature, ids, protos, cfg);
  CHECK(b.logits(0, 0) == doctest::Approx(15.0).epsilon(1e-12));  // positive column
  CHECK(b.logits(0, 1) == doctest::Approx(15.0).epsilon(1e-12));  // negative column

  cfg.kind = LossKind::AmSoftmax;
  cfg.margin = 0.35;
  b = make_logits(feature, ids, protos, cfg);
  CHECK(b.logits(0, 0) == doctest::Approx(30.0 * (0.5 - 0.35)).epsilon(1e-12));
  CHECK(b.logits(0, 1) == doctest::Approx(15.0).epsilon(1e-12));  // margin only on positive

  cfg.kind = LossKind::ArcSoftmax;
  cfg.margin = 0.5;
  protos.positives = vec_at_cos(std::cos(1.0));
  b = make_logits(feature, ids, protos, cfg);
  CHECK(b.logits(0, 0) == doctest::Approx(30.0 * std::cos(1.5)).epsilon(1e-9));
}

TEST_CASE("non-unit inputs are rejected") {
  Rng rng(1);
  Matrix feature(1, 2);
  feature(0, 0) = 1.001;  // off the sphere by more than 1e-6
  feature(0, 1) = 0.0;
  PrototypeSet protos = random_protos(1, 0, 2, rng);
  protos.positive_ids = {0};
  CHECK_THROWS(make_logits(feature, std::vector<int>{0}, protos, LossConfig{}));
}

TEST_CASE("cross entropy closed-form cases") {
  // Two columns with equal logits: loss = ln 2.
  Matrix feature(1, 2);
  feature(0, 0) = 1.0;
  feature(0, 1) = 0.0;
  PrototypeSet protos;
  protos.positives = vec_at_cos(0.5);
  protos.positive_ids = {0};
  protos.negatives = vec_at_cos(0.5);
  protos.negative_ids = {9};
  LossConfig cfg;
  const CrossEntropyResult two = cross_entropy(make_logits(feature, std::vector<int>{0}, protos, cfg));
  CHECK(two.loss == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  // A single class saturates at probability one: loss = 0.
  protos.negatives = Matrix(0, 2);
  protos.negative_ids.clear();
  const CrossEntropyResult one = cross_entropy(make_logits(feature, std::vector<int>{0}, protos, cfg));
  CHECK(one.loss == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("softmax probabilities sum to one per row") {
  Rng rng(2);
  const int batch = 6, dim = 8;
  const Matrix features = unit_rows(batch, dim, rng);
  const PrototypeSet protos = random_protos(batch, 12, dim, rng);
  for (const LossKind kind :
       {LossKind::Softmax, LossKind::ASoftmax, LossKind::AmSoftmax, LossKind::ArcSoftmax}) {
    LossConfig cfg;
    cfg.kind = kind;
    const CrossEntropyResult r = cross_entropy(make_logits(features, iota_ids(batch), protos, cfg));
    for (int i = 0; i < batch; ++i) {
      double s = 0.0;
      for (int j = 0; j < r.probs.cols; ++j) s += r.probs(i, j);
      CHECK(std::abs(s - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("all gradients match finite differences for every kind") {
  Rng rng(3);
  const int batch = 4, dim = 6, negs = 5;
  Matrix raw_feat(batch, dim), raw_pos(batch, dim), raw_neg(negs, dim);
  for (auto& x : raw_feat.data) x = rng.normal();
  for (auto& x : raw_pos.data) x = rng.normal();
  for (auto& x : raw_neg.data) x = rng.normal();
  const std::vector<int> ids = iota_ids(batch);

  for (const LossKind kind :
       {LossKind::Softmax, LossKind::ASoftmax, LossKind::AmSoftmax, LossKind::ArcSoftmax}) {
    LossConfig cfg;
    cfg.kind = kind;

    // Loss as a function of the raw (pre-normalization) tensors; gradients
    // are chained through the row normalization so finite differences stay
    // inside the unit-norm contract.
    const auto loss_of = [&](const Matrix& rf, const Matrix& rp, const Matrix& rn) {
      PrototypeSet protos;
      protos.positives = l2norm_rows(rp);
      protos.positive_ids = ids;
      protos.negatives = l2norm_rows(rn);
      protos.negative_ids = iota_ids(negs, 1000);
      return cross_entropy(make_logits(l2norm_rows(rf), ids, protos, cfg)).loss;
    };

    PrototypeSet protos;
    protos.positives = l2norm_rows(raw_pos);
    protos.positive_ids = ids;
    protos.negatives = l2norm_rows(raw_neg);
    protos.negative_ids = iota_ids(negs, 1000);
    const CrossEntropyResult r = cross_entropy(make_logits(l2norm_rows(raw_feat), ids, protos, cfg));

    const Matrix d_raw_feat = l2norm_rows_backward(raw_feat, r.d_features);
    const Vector fd_feat = finite_diff_grad(
        [&](const Vector& t) {
          Matrix m = raw_feat;
          m.data = t;
          return loss_of(m, raw_pos, raw_neg);
        },
        raw_feat.data, 1e-6);
    CHECK(rel_err(d_raw_feat.data, fd_feat) <= 1e-5);

    Matrix d_pos(batch, dim), d_neg(negs, dim);
    for (int i = 0; i < batch; ++i)
      std::copy(r.d_protos.row(i).begin(), r.d_protos.row(i).end(), d_pos.row(i).begin());
    for (int i = 0; i < negs; ++i)
      std::copy(r.d_protos.row(batch + i).begin(), r.d_protos.row(batch + i).end(),
                d_neg.row(i).begin());

    const Matrix d_raw_pos = l2norm_rows_backward(raw_pos, d_pos);
    const Vector fd_pos = finite_diff_grad(
        [&](const Vector& t) {
          Matrix m = raw_pos;
          m.data = t;
          return loss_of(raw_feat, m, raw_neg);
        },
        raw_pos.data, 1e-6);
    CHECK(rel_err(d_raw_pos.data, fd_pos) <= 1e-5);

    const Matrix d_raw_neg = l2norm_rows_backward(raw_neg, d_neg);
    const Vector fd_neg = finite_diff_grad(
        [&](const Vector& t) {
          Matrix m = raw_neg;
          m.data = t;
          return loss_of(raw_feat, raw_pos, m);
        },
        raw_neg.data, 1e-6);
    CHECK(rel_err(d_raw_neg.data, fd_neg) <= 1e-5);
  }
}

// Plain softmax: the per-sample positive-prototype gradient must equal
// s (p_y - 1) x computed from the returned probabilities.
TEST_CASE("closed-form positive prototype gradient") {
  Rng rng(4);
  const int batch = 5, dim = 7;
  const Matrix features = unit_rows(batch, dim, rng);
  const PrototypeSet protos = random_protos(batch, 9, dim, rng);
  LossConfig cfg;
  cfg.kind = LossKind::Softmax;
  const LogitsBundle b = make_logits(features, iota_ids(batch), protos, cfg);
  const CrossEntropyResult r = cross_entropy(b);
  for (int i = 0; i < batch; ++i) {
    const double coef = cfg.scale * (r.probs(i, b.labels[i]) - 1.0);
    for (int j = 0; j < dim; ++j)
      CHECK(std::abs(r.d_pos_protos(i, j) - coef * features(i, j)) <= 1e-10);
  }
}

TEST_CASE("increasing the margin never decreases the loss") {
  Rng rng(5);
  const int batch = 6, dim = 8;
  const Matrix features = unit_rows(batch, dim, rng);
  const PrototypeSet protos = random_protos(batch, 10, dim, rng);
  for (const LossKind kind : {LossKind::AmSoftmax, LossKind::ArcSoftmax}) {
    double prev = -1.0;
    for (const double margin : {0.0, 0.15, 0.3, 0.45}) {
      LossConfig cfg;
      cfg.kind = kind;
      cfg.margin = margin;
      const double loss = cross_entropy(make_logits(features, iota_ids(batch), protos, cfg)).loss;
      CHECK(loss >= prev - 1e-12);
      prev = loss;
    }
  }
}

TEST_CASE("argmax of logits is invariant to the scale") {
  Rng rng(6);
  const int batch = 5, dim = 6;
  const Matrix features = unit_rows(batch, dim, rng);
  const PrototypeSet protos = random_protos(batch, 8, dim, rng);
  std::vector<int> reference;
  for (const double s : {1.0, 10.0, 30.0, 64.0}) {
    LossConfig cfg;
    cfg.kind = LossKind::AmSoftmax;
    cfg.scale = s;
    const LogitsBundle b = make_logits(features, iota_ids(batch), protos, cfg);
    std::vector<int> argmax(batch);
    for (int i = 0; i < batch; ++i) {
      int best = 0;
      for (int j = 1; j < b.logits.cols; ++j)
        if (b.logits(i, j) > b.logits(i, best)) best = j;
      argmax[i] = best;
    }
    if (reference.empty())
      reference = argmax;
    else
      CHECK(argmax == reference);
  }
}

TEST_CASE("prototype norm regularizer") {
  const Vector w = {3.0, 4.0};
  auto [value, grad] = prototype_norm_reg(w, 10.0, 2.0);
  CHECK(value == doctest::Approx(10.0).epsilon(1e-12));  // 2 * (10 - 5)
  CHECK(grad[0] == doctest::Approx(-2.0 * 3.0 / 5.0).epsilon(1e-12));
  CHECK(grad[1] == doctest::Approx(-2.0 * 4.0 / 5.0).epsilon(1e-12));

  auto [at_alpha, g2] = prototype_norm_reg(w, 5.0, 2.0);
  CHECK(at_alpha == doctest::Approx(0.0).epsilon(1e-12));

  auto [off, g3] = prototype_norm_reg(w, 10.0, 0.0);
  CHECK(off == 0.0);
  for (double x : g3) CHECK(x == 0.0);

  CHECK_THROWS_AS(prototype_norm_reg(Vector{0.0, 0.0}, 1.0, 1.0), NormTooSmall);
}

TEST_CASE("network distance penalty") {
  CHECK(network_distance_penalty(1.5, 2.0, 1.0) == 0.0);
  CHECK(network_distance_penalty(5.0, 2.0, 1.0) == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(network_distance_penalty(5.0, 2.0, 0.0) == 0.0);
  CHECK_THROWS_AS(network_distance_penalty(1.0, 0.0, -1.0), ConfigError);
}

TEST_CASE("config validation catches out-of-range margins") {
  LossConfig cfg;
  cfg.kind = LossKind::AmSoftmax;
  cfg.margin = 1.5;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.kind = LossKind::ArcSoftmax;
  cfg.margin = 2.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.kind = LossKind::ASoftmax;
  cfg.margin = -1.0;
  cfg.angular_m = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.angular_m = 2;
  cfg.scale = -1.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}
