#pragma once

// Rollout curves, energy spectra, layer diagnostics and plotter-ready exports.

#include "gpo/gpo_model.hpp"
#include "gpo/metrics.hpp"
#include "gpo/spectral.hpp"
#include "gpo/tensor_io.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

namespace gpo {

// ---------------------------------------------------------------------------
// Rollout

struct RolloutReport {
  std::vector<double> rel_l2;            // one entry per completed step
  std::vector<Mat<double>> predictions;  // kept when requested
  Index requested_steps = 0;
  bool diverged = false;
  double divergence_threshold = 10;
};

// Maps a denormalized field to the denormalized next-step prediction on the same points.
using StepFn = std::function<Mat<double>(const SampledField<double>&)>;

// truth[t] is the reference after t + 1 steps.
RolloutReport rollout(const StepFn& step, const SampledField<double>& initial, Index T,
                      const std::vector<Mat<double>>& truth, bool keep_predictions = false,
                      double divergence_threshold = 10);

// normalize -> forward -> denormalize
inline StepFn model_step(const GPOModel<double>& model, const NormStats<double>& in_stats,
                         const NormStats<double>& out_stats) {
  return [&model, in_stats, out_stats](const SampledField<double>& u) {
    return denormalize_values(forward(model, normalize(u, in_stats)), out_stats);
  };
}

// ---------------------------------------------------------------------------
// Energy spectrum

struct SpectrumReport {
  std::vector<double> k;  // integer shell index 0..kmax
  std::vector<double> E;  // sum over |k| in [k - 1/2, k + 1/2) of 1/2 |u_hat|^2, u_hat = FFT / n^2
  double slope = 0;
  double k_lo = 4;
  double k_hi = 12;
  Index fit_points = 0;

  double total() const;                 // = 1/2 mean(u^2), summed over channels
  double total_without_mean() const;    // = 1/2 variance
};

// Channels given as separate n x n grids.
SpectrumReport energy_spectrum(const std::vector<Mat<double>>& channels, double k_lo = 4, double k_hi = 12);
inline SpectrumReport energy_spectrum(const Mat<double>& grid, double k_lo = 4, double k_hi = 12) {
  return energy_spectrum(std::vector<Mat<double>>{grid}, k_lo, k_hi);
}

// Least-squares slope of log y against log x over x in [lo, hi] with y > 0.
double loglog_slope(const std::vector<double>& x, const std::vector<double>& y, double lo, double hi,
                    Index* used = nullptr);

// ---------------------------------------------------------------------------
// Layer diagnostics and exports

struct LayerDiagnostics {
  std::vector<std::vector<Mat<double>>> alpha;       // [layer][head] G x G
  std::vector<std::vector<Vec<double>>> window_entropy;  // [layer][head] N
  std::vector<std::vector<std::vector<bool>>> degenerate;  // [layer][head][mode]
  std::vector<Vec<double>> activation;                 // A^(k), k = 0..n
  std::vector<Mat<double>> stages;                     // Z^(k)
};

LayerDiagnostics layer_diagnostics(const GPOModel<double>& model, const SampledField<double>& normalized_input);
nlohmann::json to_json(const LayerDiagnostics& d);

nlohmann::json particles_json(const GaussianField<double>& gf);

struct ExportSummary {
  std::vector<std::string> files;
  Index particle_count = 0;
};

// Writes particles.json, pred/truth/error GPT1 fields (with sidecars), per-stage
// Z^(k) tensors and layers.json under out_dir. Inputs are denormalized.
ExportSummary export_overlays(const GPOModel<double>& model, const NormStats<double>& in_stats,
                              const NormStats<double>& out_stats, const SampledField<double>& input,
                              const Mat<double>& truth, const std::string& out_dir);

}  // namespace gpo
