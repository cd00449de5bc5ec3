#pragma once

// Experiment configuration: JSON schema with unknown-key rejection, presets
// and a stable content hash.

#include "gpo/gpo_model.hpp"
#include "gpo/synth.hpp"
#include "gpo/training.hpp"

#include <json.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace gpo {

struct DataConfig {
  SynthSpec synth;
  Index n_traj = 50;
  Index horizon = 20;
  SplitFractions split;
  double mask_fraction = 0;
  std::uint64_t mask_seed = 1;
  std::string path;  // existing dataset directory; empty = synthesize
};

struct EvalConfig {
  Index rollout_T = 20;
  double k_lo = 4;
  double k_hi = 12;
  Index query_n = 64;
};

struct ExperimentConfig {
  ModelConfig model;
  TrainConfig training;
  DataConfig data;
  EvalConfig eval;
  std::string precision = "f64";

  void validate() const;  // throws ConfigError naming the field
};

ExperimentConfig default_config();

// Named presets. Base presets ("tiny", "desk", "ns2d") replace the model
// section; ablation presets ("no-pg", "no-gaussian-field", "g1", "g16",
// "g64") modify it.
std::vector<std::string> preset_names();
void apply_preset(ExperimentConfig& cfg, const std::string& name);

nlohmann::json to_json(const ExperimentConfig& cfg);
// Overlays the keys of j onto base; unknown keys and wrong types throw ConfigError.
ExperimentConfig from_json(const nlohmann::json& j, ExperimentConfig base = default_config());
ExperimentConfig load_config(const std::string& path, ExperimentConfig base = default_config());

std::string config_hash(const ExperimentConfig& cfg);

}  // namespace gpo
