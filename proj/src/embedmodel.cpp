#include "masstlab/embedmodel.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "masstlab/rng.hpp"
#include "masstlab/textio.hpp"

namespace masstlab {

std::size_t param_count_for(std::span<const int> layer_sizes) {
  std::size_t q = 0;
  for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l)
    q += static_cast<std::size_t>(layer_sizes[l]) * layer_sizes[l + 1] + layer_sizes[l + 1];
  return q;
}

std::size_t EmbeddingNet::weight_offset(int layer) const {
  std::size_t off = 0;
  for (int l = 0; l < layer; ++l)
    off += static_cast<std::size_t>(layer_sizes[l]) * layer_sizes[l + 1] + layer_sizes[l + 1];
  return off;
}

std::size_t EmbeddingNet::bias_offset(int layer) const {
  return weight_offset(layer) + static_cast<std::size_t>(layer_sizes[layer]) * layer_sizes[layer + 1];
}

std::vector<LayerPrimitive> EmbeddingNet::primitives() const {
  std::vector<LayerPrimitive> out;
  for (int l = 0; l < num_affine(); ++l) {
    out.push_back({LayerPrimitive::Kind::Affine, l});
    if (l + 1 < num_affine()) out.push_back({LayerPrimitive::Kind::Nonlinearity, -1});
  }
  out.push_back({LayerPrimitive::Kind::L2Normalize, -1});
  return out;
}

EmbeddingNet make_net(std::vector<int> layer_sizes, Activation act, std::uint64_t seed) {
  if (layer_sizes.size() < 2) throw ConfigError("embedmodel: need at least input and embedding sizes");
  for (int s : layer_sizes)
    if (s < 1) throw ConfigError("embedmodel: layer sizes must be >= 1");

  EmbeddingNet net;
  net.layer_sizes = std::move(layer_sizes);
  net.activation = act;
  net.theta.assign(param_count_for(net.layer_sizes), 0.0);

  Rng rng(seed);
  for (int l = 0; l < net.num_affine(); ++l) {
    const int fan_in = net.layer_sizes[l];
    const int fan_out = net.layer_sizes[l + 1];
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    double* w = net.theta.data() + net.weight_offset(l);
    const std::size_t count = static_cast<std::size_t>(fan_in) * fan_out;
    for (std::size_t i = 0; i < count; ++i) w[i] = rng.uniform(-bound, bound);
    // biases stay zero
  }
  return net;
}

Vector params_vector(const EmbeddingNet& net) { return net.theta; }

void load_params(EmbeddingNet& net, std::span<const double> theta) {
  if (theta.size() != net.param_count())
    throw ShapeError("embedmodel: parameter vector length " + std::to_string(theta.size()) +
                     " != " + std::to_string(net.param_count()));
  net.theta.assign(theta.begin(), theta.end());
}

double net_distance(const EmbeddingNet& a, const EmbeddingNet& b) {
  if (!a.same_architecture(b)) throw ShapeError("embedmodel: architecture mismatch in net_distance");
  return distance2(a.theta, b.theta);
}

Vector average_params(const std::vector<const EmbeddingNet*>& nets) {
  if (nets.empty()) throw ShapeError("embedmodel: average over zero nets");
  for (const auto* n : nets)
    if (!n->same_architecture(*nets.front()))
      throw ShapeError("embedmodel: architecture mismatch in average");
  Vector mean(nets.front()->param_count(), 0.0);
  for (const auto* n : nets) axpy(1.0, n->theta, mean);
  scale(mean, 1.0 / static_cast<double>(nets.size()));
  return mean;
}

ForwardTrace forward_trace(const EmbeddingNet& net, const Matrix& batch) {
  if (batch.cols != net.input_dim())
    throw ShapeError("embedmodel: batch has " + std::to_string(batch.cols) + " columns, net expects " +
                     std::to_string(net.input_dim()));
  ForwardTrace trace;
  trace.inputs.reserve(net.num_affine());
  trace.preact.reserve(net.num_affine());
  Matrix cur = batch;
  for (int l = 0; l < net.num_affine(); ++l) {
    trace.inputs.push_back(cur);
    Matrix z = affine_forward(cur, net.weights(l), net.biases(l), net.layer_sizes[l + 1]);
    trace.preact.push_back(z);
    if (l + 1 < net.num_affine())
      cur = activation_forward(z, net.activation);
    else
      cur = std::move(z);
  }
  trace.features = l2norm_rows(cur);
  check_finite(trace.features, "embedmodel: forward");
  return trace;
}

Matrix forward(const EmbeddingNet& net, const Matrix& batch) {
  return forward_trace(net, batch).features;
}

Vector backward(const EmbeddingNet& net, const ForwardTrace& trace, const Matrix& upstream) {
  if (!trace.features.same_shape(upstream))
    throw ShapeError("embedmodel: upstream shape mismatch in backward");
  Vector grad(net.param_count(), 0.0);
  const int last = net.num_affine() - 1;
  Matrix g = l2norm_rows_backward(trace.preact[last], upstream);
  for (int l = last; l >= 0; --l) {
    Matrix dx;
    affine_backward(trace.inputs[l], net.weights(l), net.layer_sizes[l + 1], g,
                    grad.data() + net.weight_offset(l), grad.data() + net.bias_offset(l),
                    l > 0 ? &dx : nullptr);
    if (l > 0) {
      const Matrix post = activation_forward(trace.preact[l - 1], net.activation);
      g = activation_backward(trace.preact[l - 1], post, dx, net.activation);
    }
  }
  return grad;
}

Vector backward(const EmbeddingNet& net, const Matrix& batch, const Matrix& upstream) {
  return backward(net, forward_trace(net, batch), upstream);
}

void save_checkpoint(const EmbeddingNet& net, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("embedmodel: cannot open '" + path.string() + "' for writing");
  out << "masstlab-net v1 ";
  for (std::size_t i = 0; i < net.layer_sizes.size(); ++i)
    out << (i ? "," : "") << net.layer_sizes[i];
  out << ' ' << to_string(net.activation) << ' ' << net.param_count() << '\n';
  for (double v : net.theta) out << fmt_g17(v) << '\n';
  if (!out) throw Error("embedmodel: write failed for '" + path.string() + "'");
}

EmbeddingNet load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("embedmodel: cannot open '" + path.string() + "'");
  std::string header;
  if (!std::getline(in, header)) throw ParseError(path.string(), 1, "missing header");
  std::istringstream hs(header);
  std::string magic, version, sizes, act;
  std::size_t q = 0;
  if (!(hs >> magic >> version >> sizes >> act >> q) || magic != "masstlab-net" || version != "v1")
    throw ParseError(path.string(), 1, "bad header '" + header + "'");

  EmbeddingNet net;
  for (const auto& tok : split(sizes, ',')) {
    try {
      net.layer_sizes.push_back(std::stoi(tok));
    } catch (const std::exception&) {
      throw ParseError(path.string(), 1, "bad layer size '" + tok + "'");
    }
  }
  if (net.layer_sizes.size() < 2) throw ParseError(path.string(), 1, "need at least two layer sizes");
  net.activation = activation_from_string(act);
  if (q != param_count_for(net.layer_sizes))
    throw ParseError(path.string(), 1, "parameter count does not match layer sizes");

  net.theta.reserve(q);
  std::string line;
  long lineno = 1;
  while (net.theta.size() < q) {
    if (!std::getline(in, line))
      throw ParseError(path.string(), lineno + 1, "truncated: expected " + std::to_string(q) +
                                                      " parameters, got " + std::to_string(net.theta.size()));
    ++lineno;
    try {
      net.theta.push_back(std::stod(line));
    } catch (const std::exception&) {
      throw ParseError(path.string(), lineno, "bad parameter value '" + line + "'");
    }
  }
  check_finite(net.theta, "embedmodel: checkpoint");
  return net;
}

}  // namespace masstlab
