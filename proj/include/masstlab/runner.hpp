#pragma once

#include <filesystem>

#include "masstlab/config.hpp"

namespace masstlab {

inline constexpr const char* kVersionTag = "masstlab-0.1.0";

struct TrainRunOutputs {
  std::filesystem::path checkpoint;
  std::filesystem::path metrics_csv;
  std::filesystem::path curvature_csv;  // empty when probing is off
  std::filesystem::path manifest;
  TrainResult result;
};

// Full train run: resolves the dataset, trains, writes the probe checkpoint,
// the metric CSV, the curvature CSV when enabled, and a manifest naming
// every emitted file. The manifest is written last.
TrainRunOutputs run_train(const ExperimentConfig& cfg);

struct CurvatureRunSpec {
  double thr = 1e-3;
  int max_iters = 50;
  int probes = 1;
  std::uint64_t seed = 1;
  int batch_ids = 32;
  LossConfig loss;
};

// Curvature probes of a frozen checkpoint: the probe network also plays
// gallery encoder, the loss batch is drawn once from the dataset, and each
// probe restarts power iteration from a fresh seeded direction.
CurvatureTrace run_curvature(const EmbeddingNet& net, const SampledDataset& data,
                             const CurvatureRunSpec& spec);

}  // namespace masstlab
