#include "gpo/diagnostics.hpp"

#include <cmath>
#include <numeric>

namespace gpo {

RolloutReport rollout(const StepFn& step, const SampledField<double>& initial, Index T,
                      const std::vector<Mat<double>>& truth, bool keep_predictions, double divergence_threshold) {
  require_shape(static_cast<Index>(truth.size()) >= T, "rollout: truth horizon shorter than T");
  RolloutReport rep;
  rep.requested_steps = T;
  rep.divergence_threshold = divergence_threshold;
  SampledField<double> u = initial;
  for (Index t = 0; t < T; ++t) {
    Mat<double> next;
    try {
      next = step(u);
    } catch (const NumericalFault&) {
      rep.diverged = true;
      break;
    }
    const Mat<double>& ref = truth[static_cast<std::size_t>(t)];
    require_shape(next.rows() == ref.rows() && next.cols() == ref.cols(), "rollout: prediction and truth shapes differ");
    const double e = next.allFinite() ? relative_l2(next, ref) : std::numeric_limits<double>::infinity();
    if (!std::isfinite(e) || e > divergence_threshold) {
      rep.diverged = true;
      break;
    }
    rep.rel_l2.push_back(e);
    if (keep_predictions) rep.predictions.push_back(next);
    u = SampledField<double>(u.points, std::move(next));
  }
  return rep;
}

double SpectrumReport::total() const { return std::accumulate(E.begin(), E.end(), 0.0); }
double SpectrumReport::total_without_mean() const { return E.empty() ? 0 : total() - E.front(); }

double loglog_slope(const std::vector<double>& x, const std::vector<double>& y, double lo, double hi, Index* used) {
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  Index n = 0;
  for (std::size_t i = 0; i < x.size() && i < y.size(); ++i) {
    if (x[i] < lo || x[i] > hi || !(y[i] > 0) || !(x[i] > 0)) continue;
    const double lx = std::log(x[i]), ly = std::log(y[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
    ++n;
  }
  if (used) *used = n;
  if (n < 2) throw DomainError("loglog_slope: fewer than two positive points in the fit band");
  const double den = static_cast<double>(n) * sxx - sx * sx;
  return (static_cast<double>(n) * sxy - sx * sy) / den;
}

SpectrumReport energy_spectrum(const std::vector<Mat<double>>& channels, double k_lo, double k_hi) {
  require_shape(!channels.empty(), "energy_spectrum: no channels");
  const Index n = channels.front().rows();
  for (const auto& c : channels)
    if (c.rows() != c.cols() || c.rows() != n)
      throw ShapeError("energy_spectrum: every channel must be the same square n x n periodic grid");
  const Index kmax = static_cast<Index>(std::ceil(std::sqrt(2.0) * static_cast<double>(n / 2))) + 1;
  SpectrumReport rep;
  rep.k_lo = k_lo;
  rep.k_hi = k_hi;
  rep.E.assign(static_cast<std::size_t>(kmax + 1), 0.0);
  for (Index i = 0; i <= kmax; ++i) rep.k.push_back(static_cast<double>(i));
  const double scale = 1.0 / static_cast<double>(n * n);
  for (const auto& c : channels) {
    const MatC h = fft2(c);
    for (Index i = 0; i < n; ++i)
      for (Index j = 0; j < n; ++j) {
        const double kx = static_cast<double>(wavenumber(i, n)), ky = static_cast<double>(wavenumber(j, n));
        const auto bin = static_cast<std::size_t>(std::floor(std::hypot(kx, ky) + 0.5));
        rep.E[bin] += 0.5 * std::norm(h(i, j) * scale);
      }
  }
  try {
    rep.slope = loglog_slope(rep.k, rep.E, k_lo, k_hi, &rep.fit_points);
  } catch (const DomainError&) {
    rep.slope = std::numeric_limits<double>::quiet_NaN();
  }
  return rep;
}

LayerDiagnostics layer_diagnostics(const GPOModel<double>& model, const SampledField<double>& input) {
  ForwardCache<double> cache;
  forward(model, input, &cache);
  LayerDiagnostics d;
  d.stages = cache.Z;
  for (const auto& Z : cache.Z) d.activation.push_back(Z.rowwise().sum());
  for (const auto& lc : cache.layers) {
    d.alpha.push_back(lc.coupling.alpha);
    std::vector<Vec<double>> ent;
    for (const auto& P : lc.windows.P) ent.push_back(nn::row_entropy<double>(P));
    d.window_entropy.push_back(std::move(ent));
    d.degenerate.push_back(lc.tokens.degenerate);
  }
  return d;
}

namespace {

std::vector<std::vector<double>> rows_of(const Mat<double>& m) {
  std::vector<std::vector<double>> out(static_cast<std::size_t>(m.rows()));
  for (Index r = 0; r < m.rows(); ++r)
    for (Index c = 0; c < m.cols(); ++c) out[static_cast<std::size_t>(r)].push_back(m(r, c));
  return out;
}

std::vector<double> values_of(const Vec<double>& v) { return {v.data(), v.data() + v.size()}; }

}  // namespace

nlohmann::json to_json(const LayerDiagnostics& d) {
  nlohmann::json j;
  j["activation"] = nlohmann::json::array();
  for (const auto& a : d.activation) j["activation"].push_back(values_of(a));
  j["layers"] = nlohmann::json::array();
  for (std::size_t k = 0; k < d.alpha.size(); ++k) {
    nlohmann::json layer;
    layer["index"] = k;
    for (std::size_t h = 0; h < d.alpha[k].size(); ++h) {
      layer["heads"].push_back({{"alpha", rows_of(d.alpha[k][h])},
                                {"window_entropy", values_of(d.window_entropy[k][h])},
                                {"degenerate_modes", d.degenerate[k][h]}});
    }
    j["layers"].push_back(layer);
  }
  return j;
}

nlohmann::json particles_json(const GaussianField<double>& gf) {
  nlohmann::json arr = nlohmann::json::array();
  for (Index j = 0; j < gf.size(); ++j)
    for (Index i = 0; i < gf.G; ++i) {
      std::vector<double> mu, sigma;
      for (Index a = 0; a < gf.d; ++a) {
        mu.push_back(gf.mu(j, i * gf.d + a));
        sigma.push_back(gf.sigma(j, i * gf.d + a));
      }
      arr.push_back({{"site", j}, {"component", i}, {"mu", mu}, {"sigma", sigma}, {"w", gf.w(j, i)}});
    }
  return arr;
}

ExportSummary export_overlays(const GPOModel<double>& model, const NormStats<double>& in_stats,
                              const NormStats<double>& out_stats, const SampledField<double>& input,
                              const Mat<double>& truth, const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  const SampledField<double> a = compact(input);
  require_shape(truth.rows() == a.size(), "export_overlays: truth must cover the unmasked points");
  const SampledField<double> an = normalize(a, in_stats);
  const Mat<double> pred = denormalize_values(forward(model, an), out_stats);
  const Mat<double> err = (pred - truth).cwiseAbs();
  ExportSummary s;
  auto path = [&](const std::string& f) {
    s.files.push_back((fs::path(out_dir) / f).string());
    return s.files.back();
  };
  std::vector<std::string> names;
  for (Index c = 0; c < truth.cols(); ++c) names.push_back("u" + std::to_string(c));
  std::vector<std::string> axes{"x", "y", "z"};
  axes.resize(static_cast<std::size_t>(a.points.dim()));
  save_field_tensor(path("coords.gpt1"), to_tensor(a.points.coords), axes);
  save_field_tensor(path("pred.gpt1"), to_tensor(pred), names);
  save_field_tensor(path("truth.gpt1"), to_tensor(truth), names);
  save_field_tensor(path("error.gpt1"), to_tensor(err), names);

  if (model.cfg.encoder == EncoderKind::Gaussian) {
    const GaussianField<double> gf = encode(an, model.emb, model.enc);
    const nlohmann::json pj = particles_json(gf);
    s.particle_count = static_cast<Index>(pj.size());
    std::ofstream(path("particles.json")) << pj.dump() << "\n";
  }
  const LayerDiagnostics d = layer_diagnostics(model, an);
  for (std::size_t k = 0; k < d.stages.size(); ++k)
    save_tensor(path("z_stage" + std::to_string(k) + ".gpt1"), to_tensor(d.stages[k]));
  std::ofstream(path("layers.json")) << to_json(d).dump() << "\n";
  return s;
}

}  // namespace gpo
