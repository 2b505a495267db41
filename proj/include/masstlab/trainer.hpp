#pragma once

#include <deque>
#include <optional>
#include <ostream>

#include "masstlab/curvature.hpp"
#include "masstlab/embedmodel.hpp"
#include "masstlab/losses.hpp"
#include "masstlab/synthdata.hpp"

namespace masstlab {

// Fixed-capacity FIFO of unit gallery features standing in for the weights
// of a classification FC layer. Push past capacity evicts the oldest entry.
class GalleryQueue {
 public:
  struct Entry {
    Vector feature;
    int id;
  };

  explicit GalleryQueue(std::size_t capacity);

  void push(std::span<const double> feature, int id);
  void push_batch(const Matrix& features, std::span<const int> ids);

  std::size_t size() const { return entries_.size(); }
  std::size_t capacity() const { return capacity_; }
  const std::deque<Entry>& entries() const { return entries_; }

 private:
  std::size_t capacity_;
  std::deque<Entry> entries_;
};

struct NegativeSet {
  Matrix features;
  std::vector<int> ids;
};

// All queue entries whose id is not in the batch; stale same-id features
// would be false negatives.
NegativeSet negatives_for(const GalleryQueue& queue, std::span<const int> batch_ids);

// Moving-average update: m * agent + (1 - m) * probe.
Vector sst_update(const Vector& agent, const Vector& probe, double m);

// Multi-agent update of agent `index`:
//   (1 + a) * (m * agent + (1 - m) * probe) - a * mean of the other agents.
// The second term keeps the stack intentionally dispersed. a > 0 needs at
// least two agents.
Vector masst_agent_update(const std::vector<Vector>& agents, int index, const Vector& probe,
                          double m, double a);

struct AgentStack {
  std::vector<EmbeddingNet> agents;
  int cursor = 0;
  double momentum = 0.9;  // m
  double mixing = 0.05;   // a

  int size() const { return static_cast<int>(agents.size()); }
};

// Round-robin: returns the current cursor, then advances it.
int rotate_agent(AgentStack& stack);

// Applies masst_agent_update to agent `index` in place; only that agent moves.
void update_agent(AgentStack& stack, int index, const Vector& probe_params);

enum class TrainMode { Convt, Sst, Masst };

TrainMode train_mode_from_string(std::string_view s);
std::string_view to_string(TrainMode m);

struct LrSchedule {
  double initial = 0.05;
  std::vector<long> milestones;  // empty = 60% and 85% of the run
  double factor = 0.1;

  double at(long iter, long total_iters) const;
};

struct AblationConfig {
  // Prototype-norm regularizer beta * (alpha - ||w_y||); conventional mode.
  double proto_alpha = 0.0;
  double proto_beta = 0.0;
  // Hinge penalty weight * max(0, ||phi_p - phi_g|| - eps); semi-siamese modes.
  double net_eps = 0.0;
  double net_weight = 0.0;
};

struct TrainerConfig {
  TrainMode mode = TrainMode::Masst;
  LossConfig loss;
  LrSchedule lr;
  long iterations = 4000;
  int batch_ids = 32;      // identities per batch, one (gallery, probe) pair each
  double momentum = 0.9;  // moving-average weight m of the agent updates
  int agents = 3;         // S
  double mixing = 0.05;   // a
  std::size_t queue_capacity = 512;
  double sgd_momentum = -1.0;  // < 0: mode default (0.9 convt, 0 otherwise)
  double weight_decay = -1.0;  // < 0: mode default (5e-4 convt, 0 otherwise)
  std::uint64_t seed = 1;
  AblationConfig ablation;
  long curvature_every = 0;   // probe interval in iterations; 0 = off
  int curvature_batch = 128;  // ids in the probed batch (capped by the dataset)
  PowerIterConfig power;
  std::vector<int> hidden = {64, 64};
  int emb_dim = 16;
  Activation activation = Activation::Tanh;

  // sst is masst with a single agent and no mixing.
  int effective_agents() const { return mode == TrainMode::Sst ? 1 : agents; }
  double effective_mixing() const { return mode == TrainMode::Sst ? 0.0 : mixing; }
  double effective_sgd_momentum() const {
    if (sgd_momentum >= 0.0) return sgd_momentum;
    return mode == TrainMode::Convt ? 0.9 : 0.0;
  }
  double effective_weight_decay() const {
    if (weight_decay >= 0.0) return weight_decay;
    return mode == TrainMode::Convt ? 5e-4 : 0.0;
  }

  void validate() const;
};

struct Batch {
  Matrix gallery;
  Matrix probe;
  std::vector<int> ids;  // distinct
};

Batch draw_batch(const SampledDataset& data, int batch_ids, Rng& rng);

struct StepMetrics {
  long iter = 0;  // 1-based
  double loss = 0.0;
  double lr = 0.0;
  std::size_t queue_len = 0;
  int agent_idx = -1;                // -1 when no agent was involved
  double min_agent_dist = 0.0;       // NaN when fewer than two agents
  double mean_agent_dist = 0.0;      // NaN when fewer than two agents
  double lambda_max = 0.0;           // NaN when no curvature probe ran
};

// Mutable per-run state. Only the probe network ever leaves this struct as
// the inference artifact.
struct TrainState {
  EmbeddingNet probe;
  AgentStack stack;
  GalleryQueue queue{0};
  Matrix proto_matrix;  // conventional mode only, raw (unnormalized) rows per id
  Vector probe_velocity;
  Vector proto_velocity;
  long iteration = 0;
  int num_ids = 0;
};

TrainState make_train_state(const TrainerConfig& cfg, int input_dim, int num_ids, const Rng& root);

// One full iteration of the training protocol: embed gallery with the
// rotated agent (no gradient), embed probe, cross-entropy over positives
// plus queue negatives, SGD on the probe only, momentum update of the
// current agent, gallery features pushed to the queue. Conventional mode
// swaps the agent/queue machinery for a learnable prototype matrix that
// receives gradient updates.
StepMetrics train_step(TrainState& state, const TrainerConfig& cfg, const Batch& batch);

struct TrainResult {
  EmbeddingNet probe;
  std::vector<StepMetrics> log;
  std::optional<CurvatureTrace> trace;
  std::optional<Matrix> proto_matrix;  // conventional mode diagnostic
};

TrainResult train(const TrainerConfig& cfg, const SampledDataset& data);

// Columns iter,loss,lr,queue_len,agent_idx,min_agent_dist,mean_agent_dist,
// lambda_max; undefined fields stay empty.
void write_metrics_csv(const std::vector<StepMetrics>& log, std::ostream& out);

}  // namespace masstlab
