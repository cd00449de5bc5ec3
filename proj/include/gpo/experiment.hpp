#pragma once

// End-to-end plumbing shared by the command-line tool and the acceptance
// suite: dataset persistence, normalized pair sets, training runs, rollout
// evaluation and the pg_layer scaling benchmark.

#include "gpo/checkpoint.hpp"
#include "gpo/config.hpp"
#include "gpo/diagnostics.hpp"
#include "gpo/synth.hpp"
#include "gpo/training.hpp"

#include <json.hpp>

#include <string>
#include <vector>

namespace gpo {

void save_dataset(const TrajectoryDataset& ds, const std::string& dir);
TrajectoryDataset load_dataset(const std::string& dir);

// data.path when set, otherwise synthesized (with the configured mask).
TrajectoryDataset load_or_make_dataset(const DataConfig& data);

struct PreparedData {
  PairSet<double> train, val, test;
  NormStats<double> in_stats, out_stats;
};

// Statistics come from the training split only.
PreparedData prepare_data(const TrajectoryDataset& ds);

struct TrainingRun {
  TrainResult<double> result;
  double seconds = 0;
  double test_rel_l2 = 0;
};

TrainingRun run_training(const ExperimentConfig& cfg, const PreparedData& data,
                         const std::function<void(const EpochRecord&)>& on_epoch = {});

void write_history_csv(const std::string& path, const std::vector<EpochRecord>& history);
nlohmann::json history_json(const std::vector<EpochRecord>& history);

// Central-difference check of the model built from cfg.model on cfg.training.batch
// random samples over the n^d grid of cfg.data.
GradCheckReport run_grad_check(const ExperimentConfig& cfg, Index coords, double h);

struct RolloutSummary {
  std::vector<double> mean_curve;
  std::vector<RolloutReport> reports;
  Index diverged = 0;
};

// Rolls out every test trajectory for T steps (truth extended with the solver when shorter).
RolloutSummary rollout_test_set(const GPOModel<double>& model, const NormStats<double>& in_stats,
                                const NormStats<double>& out_stats, const TrajectoryDataset& ds, Index T);

struct ScalingPoint {
  Index N = 0;
  double layer_seconds = 0;
  double attention_seconds = 0;
};

struct ScalingReport {
  std::vector<ScalingPoint> points;
  double exponent = 0;
  double attention_ratio = 0;  // attention time at largest N / at smallest N
};

// Median wall-clock of pg_layer forward on random inputs at each N.
template <typename Scalar>
ScalingReport bench_scaling(const ModelConfig& model, const std::vector<Index>& Ns, int repeats, std::uint64_t seed);

}  // namespace gpo
