#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "masstlab/evalsuite.hpp"
#include "masstlab/trainer.hpp"

namespace masstlab {

// Inline dataset generation in place of data.path.
struct GenSpec {
  int ids = 0;
  int dim = 32;
  Regime regime = Regime::shallow();
  std::uint64_t seed = 1;
  double noise = 0.15;
};

// One flat key=value schema shared by the subcommands; each reads the
// sections it needs. Unknown keys are rejected at parse time.
struct ExperimentConfig {
  std::string data_path;
  std::optional<GenSpec> data_gen;
  TrainerConfig trainer;
  EvalSpec eval;
  std::optional<std::string> eval_data_path;
  std::string out_dir;

  // Resolved key=value echo in schema order, for the run manifest.
  std::vector<std::pair<std::string, std::string>> echo() const;

  void validate_for_train() const;
};

ExperimentConfig parse_config_file(const std::filesystem::path& path);

// Loads data.path or generates per data.*; used by train and curvature runs.
SampledDataset resolve_dataset(const ExperimentConfig& cfg);

}  // namespace masstlab
