#include "masstlab/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "masstlab/textio.hpp"

namespace masstlab {

namespace {

constexpr double kUnitTol = 1e-6;
const double kNan = std::numeric_limits<double>::quiet_NaN();

void sgd_step(Vector& params, const Vector& grad, Vector& velocity, double lr, double mu,
              double wd) {
  if (mu > 0.0) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      velocity[i] = mu * velocity[i] + grad[i] + wd * params[i];
      params[i] -= lr * velocity[i];
    }
  } else {
    for (std::size_t i = 0; i < params.size(); ++i) params[i] -= lr * (grad[i] + wd * params[i]);
  }
}

void agent_distances(const AgentStack& stack, double* min_out, double* mean_out) {
  if (stack.size() < 2) {
    *min_out = kNan;
    *mean_out = kNan;
    return;
  }
  double mn = std::numeric_limits<double>::infinity();
  double sum = 0.0;
  int pairs = 0;
  for (int i = 0; i < stack.size(); ++i) {
    for (int j = i + 1; j < stack.size(); ++j) {
      const double d = net_distance(stack.agents[i], stack.agents[j]);
      mn = std::min(mn, d);
      sum += d;
      ++pairs;
    }
  }
  *min_out = mn;
  *mean_out = sum / pairs;
}

Matrix rows_for_ids(const Matrix& m, std::span<const int> ids) {
  Matrix out(static_cast<int>(ids.size()), m.cols);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto src = m.row(ids[i]);
    std::copy(src.begin(), src.end(), out.row(static_cast<int>(i)).begin());
  }
  return out;
}

}  // namespace

GalleryQueue::GalleryQueue(std::size_t capacity) : capacity_(capacity) {}

void GalleryQueue::push(std::span<const double> feature, int id) {
  const double n = norm2(feature);
  if (std::abs(n - 1.0) > kUnitTol)
    throw Error("trainer: queue rejects non-unit feature (norm " + fmt_g17(n) + ")");
  if (capacity_ == 0) return;
  if (entries_.size() == capacity_) entries_.pop_front();
  entries_.push_back({Vector(feature.begin(), feature.end()), id});
}

void GalleryQueue::push_batch(const Matrix& features, std::span<const int> ids) {
  if (features.rows != static_cast<int>(ids.size()))
    throw ShapeError("trainer: queue push id count mismatch");
  for (int i = 0; i < features.rows; ++i) push(features.row(i), ids[i]);
}

NegativeSet negatives_for(const GalleryQueue& queue, std::span<const int> batch_ids) {
  const auto in_batch = [&](int id) {
    return std::find(batch_ids.begin(), batch_ids.end(), id) != batch_ids.end();
  };
  std::vector<const GalleryQueue::Entry*> keep;
  keep.reserve(queue.size());
  for (const auto& e : queue.entries())
    if (!in_batch(e.id)) keep.push_back(&e);

  NegativeSet out;
  out.ids.reserve(keep.size());
  out.features = Matrix(static_cast<int>(keep.size()),
                        keep.empty() ? 0 : static_cast<int>(keep.front()->feature.size()));
  for (std::size_t i = 0; i < keep.size(); ++i) {
    std::copy(keep[i]->feature.begin(), keep[i]->feature.end(),
              out.features.row(static_cast<int>(i)).begin());
    out.ids.push_back(keep[i]->id);
  }
  return out;
}

Vector sst_update(const Vector& agent, const Vector& probe, double m) {
  if (agent.size() != probe.size()) throw ShapeError("trainer: sst update length mismatch");
  Vector out(agent.size());
  for (std::size_t i = 0; i < agent.size(); ++i) out[i] = m * agent[i] + (1.0 - m) * probe[i];
  return out;
}

Vector masst_agent_update(const std::vector<Vector>& agents, int index, const Vector& probe,
                          double m, double a) {
  if (index < 0 || index >= static_cast<int>(agents.size()))
    throw ShapeError("trainer: agent index out of range");
  Vector out = sst_update(agents[index], probe, m);
  if (a == 0.0) return out;
  const int s = static_cast<int>(agents.size());
  if (s < 2) throw Error("trainer: mixing term needs at least 2 agents");
  Vector mean(out.size(), 0.0);
  for (int j = 0; j < s; ++j) {
    if (j == index) continue;
    axpy(1.0, agents[j], mean);
  }
  scale(mean, 1.0 / (s - 1));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (1.0 + a) * out[i] - a * mean[i];
  return out;
}

int rotate_agent(AgentStack& stack) {
  const int current = stack.cursor;
  stack.cursor = (stack.cursor + 1) % stack.size();
  return current;
}

void update_agent(AgentStack& stack, int index, const Vector& probe_params) {
  std::vector<Vector> thetas;
  thetas.reserve(stack.agents.size());
  for (const auto& agent : stack.agents) thetas.push_back(agent.theta);
  stack.agents[index].theta =
      masst_agent_update(thetas, index, probe_params, stack.momentum, stack.mixing);
}

TrainMode train_mode_from_string(std::string_view s) {
  if (s == "convt") return TrainMode::Convt;
  if (s == "sst") return TrainMode::Sst;
  if (s == "masst") return TrainMode::Masst;
  throw ConfigError("trainer: unknown mode '" + std::string(s) + "'");
}

std::string_view to_string(TrainMode m) {
  switch (m) {
    case TrainMode::Convt: return "convt";
    case TrainMode::Sst: return "sst";
    case TrainMode::Masst: return "masst";
  }
  return "?";
}

double LrSchedule::at(long iter, long total_iters) const {
  std::vector<long> ms = milestones;
  if (ms.empty() && total_iters > 0)
    ms = {static_cast<long>(0.6 * total_iters), static_cast<long>(0.85 * total_iters)};
  double lr = initial;
  for (long m : ms)
    if (iter >= m) lr *= factor;
  return lr;
}

void TrainerConfig::validate() const {
  loss.validate();
  power.validate();
  if (iterations < 0) throw ConfigError("trainer: iterations must be >= 0");
  if (batch_ids < 1) throw ConfigError("trainer: batch_ids must be >= 1");
  if (!(lr.initial > 0.0)) throw ConfigError("trainer: learning rate must be positive");
  if (!(lr.factor > 0.0)) throw ConfigError("trainer: lr decay factor must be positive");
  if (!(momentum >= 0.0 && momentum <= 1.0)) throw ConfigError("trainer: momentum m must be in [0, 1]");
  if (mixing < 0.0) throw ConfigError("trainer: mixing a must be >= 0");
  if (agents < 1) throw ConfigError("trainer: agent count must be >= 1");
  // The mean-of-others term only exists for S >= 2; a = 0 degenerates to sst.
  if (mode == TrainMode::Masst && agents < 2 && mixing > 0.0)
    throw ConfigError("trainer: masst with mixing > 0 needs at least 2 agents");
  if (curvature_every < 0) throw ConfigError("trainer: curvature interval must be >= 0");
  if (curvature_every > 0 && curvature_batch < 1)
    throw ConfigError("trainer: curvature batch must be >= 1");
  if (emb_dim < 1) throw ConfigError("trainer: embedding dimension must be >= 1");
  for (int h : hidden)
    if (h < 1) throw ConfigError("trainer: hidden sizes must be >= 1");
  if (ablation.proto_beta < 0.0) throw ConfigError("trainer: proto_beta must be >= 0");
  if (ablation.net_weight < 0.0) throw ConfigError("trainer: net_weight must be >= 0");
}

Batch draw_batch(const SampledDataset& data, int batch_ids, Rng& rng) {
  if (batch_ids > data.num_ids)
    throw ConfigError("trainer: batch of " + std::to_string(batch_ids) + " ids exceeds dataset's " +
                      std::to_string(data.num_ids));
  // Distinct ids, each drawn with probability proportional to its sample
  // count: what an image-level batch grouped into pairs would see. Under a
  // long-tail distribution the head classes therefore dominate the batches,
  // while uniform-count regimes reduce to uniform id sampling.
  Batch b;
  b.ids.reserve(batch_ids);
  while (static_cast<int>(b.ids.size()) < batch_ids) {
    const int row = rng.below(data.total());
    const int id = data.sample_ids[row];
    if (std::find(b.ids.begin(), b.ids.end(), id) == b.ids.end()) b.ids.push_back(id);
  }
  b.gallery = Matrix(batch_ids, data.input_dim);
  b.probe = Matrix(batch_ids, data.input_dim);
  for (int i = 0; i < batch_ids; ++i) {
    auto [g, p] = draw_pair(data, b.ids[i], rng);
    std::copy(g.begin(), g.end(), b.gallery.row(i).begin());
    std::copy(p.begin(), p.end(), b.probe.row(i).begin());
  }
  return b;
}

TrainState make_train_state(const TrainerConfig& cfg, int input_dim, int num_ids, const Rng& root) {
  TrainState st;
  std::vector<int> sizes;
  sizes.push_back(input_dim);
  sizes.insert(sizes.end(), cfg.hidden.begin(), cfg.hidden.end());
  sizes.push_back(cfg.emb_dim);
  st.probe = make_net(sizes, cfg.activation, root.fork_seed("init"));
  st.probe_velocity.assign(st.probe.param_count(), 0.0);
  st.num_ids = num_ids;

  if (cfg.mode == TrainMode::Convt) {
    st.proto_matrix = Matrix(num_ids, cfg.emb_dim);
    Rng prng = root.stream("protos");
    const double bound = std::sqrt(6.0 / (cfg.emb_dim + num_ids));
    for (double& w : st.proto_matrix.data) w = prng.uniform(-bound, bound);
    st.proto_velocity.assign(st.proto_matrix.data.size(), 0.0);
    st.queue = GalleryQueue(0);
  } else {
    // Agents start as exact copies of the probe; dispersion builds up from
    // the mixing term, not from distinct initializations.
    st.stack.momentum = cfg.momentum;
    st.stack.mixing = cfg.effective_mixing();
    st.stack.agents.assign(cfg.effective_agents(), st.probe);
    st.queue = GalleryQueue(cfg.queue_capacity);
  }
  return st;
}

namespace {

StepMetrics semi_siamese_step(TrainState& st, const TrainerConfig& cfg, const Batch& batch,
                              double lr) {
  StepMetrics m;
  m.lr = lr;

  const int idx = rotate_agent(st.stack);
  m.agent_idx = idx;

  // Gallery features are prototypes, computed without gradient tracking.
  const Matrix gallery_feats = forward(st.stack.agents[idx], batch.gallery);
  const ForwardTrace trace = forward_trace(st.probe, batch.probe);

  NegativeSet negs = negatives_for(st.queue, batch.ids);
  PrototypeSet protos;
  protos.positives = gallery_feats;
  protos.positive_ids = batch.ids;
  protos.negatives = std::move(negs.features);
  protos.negative_ids = std::move(negs.ids);

  const LogitsBundle bundle = make_logits(trace.features, batch.ids, protos, cfg.loss);
  const CrossEntropyResult ce = cross_entropy(bundle);
  m.loss = ce.loss;

  Vector grad = backward(st.probe, trace, ce.d_features);

  if (cfg.ablation.net_weight > 0.0) {
    const double dist = net_distance(st.probe, st.stack.agents[idx]);
    m.loss += network_distance_penalty(dist, cfg.ablation.net_eps, cfg.ablation.net_weight);
    if (dist > cfg.ablation.net_eps && dist > 0.0) {
      const Vector& agent_theta = st.stack.agents[idx].theta;
      const double coef = cfg.ablation.net_weight / dist;
      for (std::size_t i = 0; i < grad.size(); ++i)
        grad[i] += coef * (st.probe.theta[i] - agent_theta[i]);
    }
  }

  sgd_step(st.probe.theta, grad, st.probe_velocity, lr, cfg.effective_sgd_momentum(),
           cfg.effective_weight_decay());

  // Agent follows the post-step probe, per the protocol order: SGD first,
  // then the momentum update of the current agent.
  update_agent(st.stack, idx, st.probe.theta);

  st.queue.push_batch(gallery_feats, batch.ids);

  m.queue_len = st.queue.size();
  agent_distances(st.stack, &m.min_agent_dist, &m.mean_agent_dist);
  return m;
}

StepMetrics conventional_step(TrainState& st, const TrainerConfig& cfg, const Batch& batch,
                              double lr) {
  StepMetrics m;
  m.lr = lr;
  m.agent_idx = -1;
  m.min_agent_dist = kNan;
  m.mean_agent_dist = kNan;

  const ForwardTrace trace = forward_trace(st.probe, batch.probe);

  // Normalized prototype rows: batch ids as positives, every other class as
  // a negative. Gradients flow back into the raw matrix through the
  // normalization.
  std::vector<int> other_ids;
  other_ids.reserve(st.num_ids - batch.ids.size());
  {
    std::vector<char> in_batch(st.num_ids, 0);
    for (int id : batch.ids) in_batch[id] = 1;
    for (int id = 0; id < st.num_ids; ++id)
      if (!in_batch[id]) other_ids.push_back(id);
  }
  const Matrix raw_pos = rows_for_ids(st.proto_matrix, batch.ids);
  const Matrix raw_neg = rows_for_ids(st.proto_matrix, other_ids);

  PrototypeSet protos;
  protos.positives = l2norm_rows(raw_pos);
  protos.positive_ids = batch.ids;
  protos.negatives = raw_neg.rows > 0 ? l2norm_rows(raw_neg) : Matrix(0, st.proto_matrix.cols);
  protos.negative_ids = other_ids;

  const LogitsBundle bundle = make_logits(trace.features, batch.ids, protos, cfg.loss);
  const CrossEntropyResult ce = cross_entropy(bundle);
  m.loss = ce.loss;

  Vector grad = backward(st.probe, trace, ce.d_features);

  // Map unit-prototype gradients back to the raw rows.
  Vector proto_grad(st.proto_matrix.data.size(), 0.0);
  const int batch_count = static_cast<int>(batch.ids.size());
  const auto add_row_grad = [&](int class_id, std::span<const double> raw,
                                std::span<const double> d_unit) {
    const double n = norm2(raw);
    const double inv = 1.0 / n;
    double ug = 0.0;
    for (std::size_t j = 0; j < raw.size(); ++j) ug += raw[j] * inv * d_unit[j];
    double* dst = proto_grad.data() + static_cast<std::size_t>(class_id) * st.proto_matrix.cols;
    for (std::size_t j = 0; j < raw.size(); ++j)
      dst[j] += (d_unit[j] - ug * raw[j] * inv) * inv;
  };
  for (int i = 0; i < batch_count; ++i)
    add_row_grad(batch.ids[i], raw_pos.row(i), ce.d_protos.row(i));
  for (std::size_t i = 0; i < other_ids.size(); ++i)
    add_row_grad(other_ids[i], raw_neg.row(static_cast<int>(i)),
                 ce.d_protos.row(batch_count + static_cast<int>(i)));

  if (cfg.ablation.proto_beta > 0.0) {
    double reg_sum = 0.0;
    for (int i = 0; i < batch_count; ++i) {
      auto [value, reg_grad] =
          prototype_norm_reg(raw_pos.row(i), cfg.ablation.proto_alpha, cfg.ablation.proto_beta);
      reg_sum += value;
      double* dst =
          proto_grad.data() + static_cast<std::size_t>(batch.ids[i]) * st.proto_matrix.cols;
      axpy(1.0 / batch_count, reg_grad, std::span<double>(dst, reg_grad.size()));
    }
    m.loss += reg_sum / batch_count;
  }

  const double mu = cfg.effective_sgd_momentum();
  const double wd = cfg.effective_weight_decay();
  sgd_step(st.probe.theta, grad, st.probe_velocity, lr, mu, wd);
  sgd_step(st.proto_matrix.data, proto_grad, st.proto_velocity, lr, mu, wd);

  m.queue_len = 0;
  return m;
}

}  // namespace

StepMetrics train_step(TrainState& st, const TrainerConfig& cfg, const Batch& batch) {
  if (batch.ids.empty()) throw Error("trainer: empty batch");
  for (std::size_t i = 0; i < batch.ids.size(); ++i)
    for (std::size_t j = i + 1; j < batch.ids.size(); ++j)
      if (batch.ids[i] == batch.ids[j])
        throw Error("trainer: id " + std::to_string(batch.ids[i]) + " repeated in batch");

  const double lr = cfg.lr.at(st.iteration, cfg.iterations);
  StepMetrics m = cfg.mode == TrainMode::Convt ? conventional_step(st, cfg, batch, lr)
                                               : semi_siamese_step(st, cfg, batch, lr);
  ++st.iteration;
  m.iter = st.iteration;
  m.lambda_max = kNan;
  return m;
}

namespace {

struct CurvatureContext {
  Batch batch;
  bool active = false;
};

// The probed batch is larger than a training batch: per-id sharpness noise
// averages out, so the trace tracks the landscape rather than the draw.
CurvatureContext make_curvature_context(const TrainerConfig& cfg, const SampledDataset& data,
                                        Rng rng) {
  CurvatureContext ctx;
  if (cfg.curvature_every <= 0) return ctx;
  ctx.batch = draw_batch(data, std::min(cfg.curvature_batch, data.num_ids), rng);
  ctx.active = true;
  return ctx;
}

// Principal curvature of the mode's own training loss on the fixed held-out
// batch: prototypes and negatives are snapshotted from the current training
// state (rotating agent plus queue, or the prototype matrix in conventional
// mode), treated as constants, and the differentiation runs over the probe
// parameters only.
PowerIterResult curvature_probe(const TrainState& st, const TrainerConfig& cfg,
                                const CurvatureContext& ctx, std::uint64_t vseed) {
  PrototypeSet protos;
  if (cfg.mode == TrainMode::Convt) {
    protos.positives = l2norm_rows(rows_for_ids(st.proto_matrix, ctx.batch.ids));
    std::vector<int> other_ids;
    std::vector<char> in_batch(st.num_ids, 0);
    for (int id : ctx.batch.ids) in_batch[id] = 1;
    for (int id = 0; id < st.num_ids; ++id)
      if (!in_batch[id]) other_ids.push_back(id);
    protos.negatives = other_ids.empty() ? Matrix(0, protos.positives.cols)
                                         : l2norm_rows(rows_for_ids(st.proto_matrix, other_ids));
    protos.negative_ids = std::move(other_ids);
  } else {
    protos.positives = forward(st.stack.agents[st.stack.cursor], ctx.batch.gallery);
    NegativeSet negs = negatives_for(st.queue, ctx.batch.ids);
    protos.negatives = std::move(negs.features);
    protos.negative_ids = std::move(negs.ids);
  }
  protos.positive_ids = ctx.batch.ids;

  EmbeddingNet scratch = st.probe;
  const GradFn grad_fn = [&](const Vector& theta) {
    load_params(scratch, theta);
    const ForwardTrace trace = forward_trace(scratch, ctx.batch.probe);
    const LogitsBundle bundle = make_logits(trace.features, ctx.batch.ids, protos, cfg.loss);
    const CrossEntropyResult ce = cross_entropy(bundle);
    return backward(scratch, trace, ce.d_features);
  };

  PowerIterConfig pc = cfg.power;
  pc.seed = vseed;
  return power_iteration(grad_fn, st.probe.theta, pc);
}

}  // namespace

TrainResult train(const TrainerConfig& cfg, const SampledDataset& data) {
  cfg.validate();
  if (cfg.batch_ids > data.num_ids)
    throw ConfigError("trainer: batch_ids exceeds dataset identity count");
  for (int id = 0; id < data.num_ids; ++id)
    if (data.count_of(id) < 2)
      throw Error("trainer: id " + std::to_string(id) + " has fewer than 2 samples");

  const Rng root(cfg.seed);
  TrainState st = make_train_state(cfg, data.input_dim, data.num_ids, root);
  Rng batch_rng = root.stream("batch");
  const CurvatureContext curv_ctx = make_curvature_context(cfg, data, root.stream("curv"));
  const Rng power_root = root.stream("power_v");

  TrainResult result;
  result.log.reserve(cfg.iterations);
  if (curv_ctx.active) result.trace = CurvatureTrace{};

  long probe_count = 0;
  for (long t = 0; t < cfg.iterations; ++t) {
    const Batch batch = draw_batch(data, cfg.batch_ids, batch_rng);
    StepMetrics m = train_step(st, cfg, batch);
    if (curv_ctx.active && (t + 1) % cfg.curvature_every == 0) {
      const PowerIterResult pr =
          curvature_probe(st, cfg, curv_ctx, power_root.fork_seed(static_cast<std::uint64_t>(probe_count)));
      ++probe_count;
      m.lambda_max = pr.lambda_max;
      result.trace->points.push_back({m.iter, pr.lambda_max, pr.rayleigh, pr.iters});
    }
    result.log.push_back(m);
  }

  result.probe = st.probe;
  if (cfg.mode == TrainMode::Convt) result.proto_matrix = st.proto_matrix;
  return result;
}

void write_metrics_csv(const std::vector<StepMetrics>& log, std::ostream& out) {
  out << "iter,loss,lr,queue_len,agent_idx,min_agent_dist,mean_agent_dist,lambda_max\n";
  const auto opt = [](double v) { return std::isnan(v) ? std::string() : fmt_g17(v); };
  for (const auto& m : log) {
    out << m.iter << ',' << fmt_g17(m.loss) << ',' << fmt_g17(m.lr) << ',' << m.queue_len << ',';
    if (m.agent_idx >= 0) out << m.agent_idx;
    out << ',' << opt(m.min_agent_dist) << ',' << opt(m.mean_agent_dist) << ','
        << opt(m.lambda_max) << '\n';
  }
}

}  // namespace masstlab
