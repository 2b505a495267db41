#pragma once

#include <string_view>
#include <vector>

#include "masstlab/matrix.hpp"

namespace masstlab {

enum class LossKind { Softmax, ASoftmax, AmSoftmax, ArcSoftmax };

LossKind loss_kind_from_string(std::string_view s);
std::string_view to_string(LossKind k);

struct LossConfig {
  LossKind kind = LossKind::Softmax;
  double scale = 30.0;   // s
  double margin = -1.0;  // am: additive cosine margin; arc: additive angle (rad); <0 = kind default
  int angular_m = 2;     // a-softmax integer angle multiplier

  double effective_margin() const;
  void validate() const;
};

// Prototype columns for one batch: positives first (one unit gallery feature
// per batch identity), then negatives (queue entries or other class weights).
// Every batch sample's id must appear exactly once among positive_ids.
struct PrototypeSet {
  Matrix positives;
  std::vector<int> positive_ids;
  Matrix negatives;
  std::vector<int> negative_ids;

  int total() const { return positives.rows + negatives.rows; }
};

// Margin-transformed logits plus everything the gradient needs: raw cosines,
// psi'(cos) at each row's positive entry, and the stacked prototype rows.
struct LogitsBundle {
  Matrix logits;      // B x (P + N), entry = s * psi(cos) on the positive column, s * cos elsewhere
  Matrix cosines;     // raw cosines
  Vector dpsi_pos;    // psi'(cos) at (i, labels[i])
  std::vector<int> labels;  // positive column per row
  Matrix features;    // B x D unit rows
  Matrix proto_rows;  // (P + N) x D unit rows, positives then negatives
  int num_positives = 0;
  double scale = 0.0;
};

LogitsBundle make_logits(const Matrix& features, std::span<const int> feature_ids,
                         const PrototypeSet& protos, const LossConfig& cfg);

struct CrossEntropyResult {
  double loss = 0.0;
  Matrix probs;
  // Gradient of the batch-mean loss w.r.t. the features.
  Matrix d_features;
  // Per-sample gradient of that sample's own (unaveraged) loss term w.r.t.
  // its positive prototype: s * psi'(cos) * (p_y - 1) * x. Callers decide
  // whether to apply it; the semi-siamese modes discard it (stop-gradient).
  Matrix d_pos_protos;
  // Gradient of the batch-mean loss w.r.t. every prototype row (positives
  // then negatives); conventional training feeds this to its weight matrix.
  Matrix d_protos;
};

CrossEntropyResult cross_entropy(const LogitsBundle& bundle);

// beta * (alpha - ||w||) and its gradient -beta * w / ||w||.
std::pair<double, Vector> prototype_norm_reg(std::span<const double> w, double alpha, double beta);

// Hinge penalty weight * max(0, dist - eps_prime).
double network_distance_penalty(double dist, double eps_prime, double weight);

}  // namespace masstlab
