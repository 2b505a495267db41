#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "masstlab/diffcore.hpp"

namespace masstlab {

// Small feedforward embedding network with a flat parameter view.
//
// Canonical flat layout: layers in forward order; within a layer the weight
// matrix (out x in, row-major) then the biases. The flat view is what agent
// averaging, checkpointing and the curvature probes operate on, so it must
// stay stable.
struct EmbeddingNet {
  std::vector<int> layer_sizes;  // input, hidden..., embedding
  Activation activation = Activation::Tanh;
  Vector theta;

  int input_dim() const { return layer_sizes.front(); }
  int emb_dim() const { return layer_sizes.back(); }
  int num_affine() const { return static_cast<int>(layer_sizes.size()) - 1; }
  std::size_t param_count() const { return theta.size(); }

  std::size_t weight_offset(int layer) const;
  std::size_t bias_offset(int layer) const;
  const double* weights(int layer) const { return theta.data() + weight_offset(layer); }
  const double* biases(int layer) const { return theta.data() + bias_offset(layer); }

  std::vector<LayerPrimitive> primitives() const;
  bool same_architecture(const EmbeddingNet& o) const {
    return layer_sizes == o.layer_sizes && activation == o.activation;
  }
};

std::size_t param_count_for(std::span<const int> layer_sizes);

// Glorot-uniform weights (bound sqrt(6/(fan_in+fan_out))), zero biases,
// deterministic per seed.
EmbeddingNet make_net(std::vector<int> layer_sizes, Activation act, std::uint64_t seed);

Vector params_vector(const EmbeddingNet& net);
void load_params(EmbeddingNet& net, std::span<const double> theta);

// L2 distance between the flat parameter vectors of two same-architecture nets.
double net_distance(const EmbeddingNet& a, const EmbeddingNet& b);

// Elementwise mean of the nets' parameters; all must share one architecture.
Vector average_params(const std::vector<const EmbeddingNet*>& nets);

struct ForwardTrace {
  std::vector<Matrix> inputs;  // input to affine l (inputs[0] = batch)
  std::vector<Matrix> preact;  // affine outputs before the nonlinearity
  Matrix features;             // unit rows
};

// Embeds a batch (rows = samples); every output row is L2-normalized.
Matrix forward(const EmbeddingNet& net, const Matrix& batch);
ForwardTrace forward_trace(const EmbeddingNet& net, const Matrix& batch);

// Reverse-mode pass; returns dLoss/dtheta in the canonical flat order.
Vector backward(const EmbeddingNet& net, const ForwardTrace& trace, const Matrix& upstream);
Vector backward(const EmbeddingNet& net, const Matrix& batch, const Matrix& upstream);

// Checkpoint: "masstlab-net v1 <layer_sizes> <activation> <q>" then q values,
// one per line, 17 significant digits.
void save_checkpoint(const EmbeddingNet& net, const std::filesystem::path& path);
EmbeddingNet load_checkpoint(const std::filesystem::path& path);

}  // namespace masstlab
