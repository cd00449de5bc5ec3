#pragma once

// Composite loss with hand-derived reverse pass, finite-difference gradient
// verification, AdamW, StepLR and the mini-batch training loop.

#include "gpo/gpo_model.hpp"
#include "gpo/metrics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace gpo {

// ---------------------------------------------------------------------------
// Flattened parameter view. The Fourier matrix B is not part of it.

struct ParamEntry {
  std::string name;
  Index offset = 0;
  Index size = 0;
  Index rows = 0;
  Index cols = 0;
};

template <typename Scalar>
std::vector<ParamEntry> param_layout(const GPOModel<Scalar>& m) {
  std::vector<ParamEntry> out;
  Index off = 0;
  m.visit_params([&](const std::string& name, const auto& t) {
    out.push_back({name, off, static_cast<Index>(t.size()), static_cast<Index>(t.rows()), static_cast<Index>(t.cols())});
    off += t.size();
  });
  return out;
}

template <typename Scalar>
Vec<Scalar> flatten(const GPOModel<Scalar>& m) {
  Vec<Scalar> v(m.parameter_count());
  Index off = 0;
  m.visit_params([&](const std::string&, const auto& t) {
    for (Index i = 0; i < t.size(); ++i) v(off + i) = t.data()[i];
    off += t.size();
  });
  return v;
}

template <typename Scalar>
void unflatten(GPOModel<Scalar>& m, const Vec<Scalar>& v) {
  require_shape(v.size() == m.parameter_count(), "unflatten: parameter vector length mismatch");
  Index off = 0;
  m.visit_params([&](const std::string&, auto& t) {
    for (Index i = 0; i < t.size(); ++i) t.data()[i] = v(off + i);
    off += t.size();
  });
}

// ---------------------------------------------------------------------------
// Loss

// One supervised pair, both sides already normalized and restricted to
// supervised points.
template <typename Scalar>
struct Sample {
  SampledField<Scalar> input;
  SampledField<Scalar> target;
};

struct LossBreakdown {
  double recon = 0;
  double reg_mu = 0;
  double reg_sigma = 0;
  double aux = 0;
  double total = 0;

  LossBreakdown& operator+=(const LossBreakdown& o) {
    recon += o.recon;
    reg_mu += o.reg_mu;
    reg_sigma += o.reg_sigma;
    aux += o.aux;
    total += o.total;
    return *this;
  }
  LossBreakdown scaled(double s) const { return {recon * s, reg_mu * s, reg_sigma * s, aux * s, total * s}; }
};

template <typename Scalar>
Scalar mean_squared_error(const Mat<Scalar>& pred, const Mat<Scalar>& target) {
  return (pred - target).squaredNorm() / static_cast<Scalar>(pred.size());
}

// Loss of a single sample; adds `weight` * dLoss/dparams into grad when given.
template <typename Scalar>
LossBreakdown sample_loss(const GPOModel<Scalar>& model, const Sample<Scalar>& s, Scalar weight,
                          GPOModel<Scalar>* grad) {
  const ModelConfig& cfg = model.cfg;
  require_shape(s.input.size() == s.target.size(), "sample_loss: input and target point counts differ");
  ForwardCache<Scalar> cache;
  const Mat<Scalar> pred = forward(model, s.input, grad ? &cache : nullptr);
  LossBreakdown lb;
  lb.recon = static_cast<double>(mean_squared_error(pred, s.target.values));

  const bool particles = cfg.encoder == EncoderKind::Gaussian;
  GaussianField<Scalar> gf;
  if (particles) {
    gf = grad ? cache.gf : encode(s.input, model.emb, model.enc);
    lb.reg_mu = static_cast<double>(reg_mu(gf, s.input.points));
    lb.reg_sigma = static_cast<double>(
        reg_sigma(gf, static_cast<Scalar>(cfg.sigma_min), static_cast<Scalar>(cfg.sigma_max)));
  }

  // Auxiliary reconstruction of the target through encode/evaluate/decode.
  EncoderCache<Scalar> aux_enc;
  DecoderCache<Scalar> aux_dec;
  GaussianField<Scalar> aux_gf;
  Mat<Scalar> aux_pred;
  const bool use_aux = particles && cfg.aux_weight > 0 && cfg.c_in == cfg.c_out;
  if (use_aux) {
    aux_gf = encode(s.target, model.emb, model.enc, &aux_enc);
    aux_pred = decode(evaluate_basis(aux_gf, s.target.points), model.dec, &aux_dec);
    lb.aux = static_cast<double>(mean_squared_error(aux_pred, s.target.values));
  }
  lb.total = lb.recon + cfg.reg_mu_weight * lb.reg_mu + cfg.reg_sigma_weight * lb.reg_sigma + cfg.aux_weight * lb.aux;
  if (!std::isfinite(lb.total)) throw NumericalFault("non-finite loss");
  if (!grad) return lb;

  const Mat<Scalar> dpred = (Scalar(2) * weight / static_cast<Scalar>(pred.size())) * (pred - s.target.values);
  if (particles) {
    GaussianField<Scalar> dreg = GaussianField<Scalar>::zeros(gf.size(), gf.G, gf.d);
    reg_mu_backward(gf, s.input.points, static_cast<Scalar>(cfg.reg_mu_weight) * weight, dreg);
    reg_sigma_backward(gf, static_cast<Scalar>(cfg.sigma_min), static_cast<Scalar>(cfg.sigma_max),
                       static_cast<Scalar>(cfg.reg_sigma_weight) * weight, dreg);
    backward(model, cache, dpred, &dreg, *grad);
  } else {
    backward<Scalar>(model, cache, dpred, nullptr, *grad);
  }
  if (use_aux) {
    const Scalar c = static_cast<Scalar>(cfg.aux_weight) * weight * Scalar(2) / static_cast<Scalar>(aux_pred.size());
    const Mat<Scalar> dz = decode_backward(aux_dec, model.dec, (c * (aux_pred - s.target.values)).eval(), grad->dec);
    GaussianField<Scalar> dgf = GaussianField<Scalar>::zeros(aux_gf.size(), aux_gf.G, aux_gf.d);
    evaluate_basis_backward(aux_gf, s.target.points, dz, dgf);
    encode_backward(aux_enc, model.enc, dgf, grad->enc);
  }
  return lb;
}

// Batch-mean loss; when grad is non-null it receives the batch-mean gradient.
template <typename Scalar>
LossBreakdown batch_loss(const GPOModel<Scalar>& model, std::span<const Sample<Scalar>* const> batch,
                         GPOModel<Scalar>* grad) {
  require_shape(!batch.empty(), "batch_loss: empty batch");
  if (grad) *grad = model.zeros_like();
  const Scalar w = Scalar(1) / static_cast<Scalar>(batch.size());
  LossBreakdown total;
  for (const auto* s : batch) total += sample_loss(model, *s, w, grad);
  return total.scaled(1.0 / static_cast<double>(batch.size()));
}

template <typename Scalar>
std::vector<const Sample<Scalar>*> as_batch(const std::vector<Sample<Scalar>>& samples) {
  std::vector<const Sample<Scalar>*> b;
  for (const auto& s : samples) b.push_back(&s);
  return b;
}

// Gradient of the total batch loss as a flat vector.
template <typename Scalar>
std::pair<Vec<Scalar>, LossBreakdown> grad(const GPOModel<Scalar>& model, std::span<const Sample<Scalar>* const> batch) {
  GPOModel<Scalar> g;
  LossBreakdown lb = batch_loss(model, batch, &g);
  return {flatten(g), lb};
}

// ---------------------------------------------------------------------------
// Finite-difference verification

struct GradCheckEntry {
  std::string name;
  Index flat_index = 0;
  double analytic = 0;
  double numeric = 0;
  double rel_error = 0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0;
  double median_rel_error = 0;
  double step = 0;
  double abs_floor = 0;
  double seconds = 0;
  Index parameter_count = 0;

  bool passed(double tol) const { return max_rel_error < tol; }
};

// |a - n| / max(|a|, |n|, abs_floor)
inline double grad_rel_error(double analytic, double numeric, double abs_floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), abs_floor});
}

// Central differences (L(theta + h e) - L(theta - h e)) / 2h on randomly sampled coordinates.
inline GradCheckReport check_gradients(const GPOModel<double>& model, std::span<const Sample<double>* const> batch,
                                       Index n_coords, double h, std::uint64_t seed, double abs_floor = 1e-6) {
  const auto t0 = std::chrono::steady_clock::now();
  GradCheckReport rep;
  rep.step = h;
  rep.abs_floor = abs_floor;
  const auto [g, lb] = grad(model, batch);
  (void)lb;
  const Vec<double> theta = flatten(model);
  rep.parameter_count = theta.size();
  const auto layout = param_layout(model);

  std::mt19937_64 rng(seed);
  std::vector<Index> coords(static_cast<std::size_t>(theta.size()));
  std::iota(coords.begin(), coords.end(), Index{0});
  std::shuffle(coords.begin(), coords.end(), rng);
  coords.resize(static_cast<std::size_t>(std::min<Index>(n_coords, theta.size())));

  GPOModel<double> probe = model;
  for (Index idx : coords) {
    Vec<double> t = theta;
    t(idx) = theta(idx) + h;
    unflatten(probe, t);
    const double lp = batch_loss<double>(probe, batch, nullptr).total;
    t(idx) = theta(idx) - h;
    unflatten(probe, t);
    const double lm = batch_loss<double>(probe, batch, nullptr).total;
    GradCheckEntry e;
    e.flat_index = idx;
    e.analytic = g(idx);
    e.numeric = (lp - lm) / (2 * h);
    e.rel_error = grad_rel_error(e.analytic, e.numeric, abs_floor);
    for (const auto& p : layout)
      if (idx >= p.offset && idx < p.offset + p.size) e.name = p.name;
    rep.entries.push_back(std::move(e));
  }
  std::vector<double> errs;
  for (const auto& e : rep.entries) errs.push_back(e.rel_error);
  if (!errs.empty()) {
    rep.max_rel_error = *std::max_element(errs.begin(), errs.end());
    std::nth_element(errs.begin(), errs.begin() + static_cast<std::ptrdiff_t>(errs.size() / 2), errs.end());
    rep.median_rel_error = errs[errs.size() / 2];
  }
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

// ---------------------------------------------------------------------------
// Optimizer and schedule

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

template <typename Scalar>
struct AdamWState {
  Vec<Scalar> m;
  Vec<Scalar> v;
  std::int64_t step = 0;

  static AdamWState zeros(Index n) { return {Vec<Scalar>::Zero(n), Vec<Scalar>::Zero(n), 0}; }
};

// Decoupled weight decay followed by the bias-corrected adaptive-moment step.
template <typename Scalar>
void optimizer_step(Vec<Scalar>& params, const Vec<Scalar>& grads, AdamWState<Scalar>& st, double lr,
                    const AdamWConfig& cfg) {
  require_shape(params.size() == grads.size() && st.m.size() == params.size() && st.v.size() == params.size(),
                "optimizer_step: state shape mismatch");
  ++st.step;
  const Scalar b1 = static_cast<Scalar>(cfg.beta1), b2 = static_cast<Scalar>(cfg.beta2);
  st.m = b1 * st.m + (Scalar(1) - b1) * grads;
  st.v = b2 * st.v + (Scalar(1) - b2) * grads.cwiseAbs2();
  const Scalar bc1 = Scalar(1) - std::pow(b1, static_cast<Scalar>(st.step));
  const Scalar bc2 = Scalar(1) - std::pow(b2, static_cast<Scalar>(st.step));
  params *= Scalar(1) - static_cast<Scalar>(lr * cfg.weight_decay);
  params.array() -= static_cast<Scalar>(lr) * (st.m.array() / bc1) /
                    ((st.v.array() / bc2).sqrt() + static_cast<Scalar>(cfg.eps));
}

struct StepLR {
  double lr0 = 1e-3;
  int period = 100;
  double gamma = 0.5;

  double operator()(int step) const {
    return lr0 * std::pow(gamma, static_cast<double>(step / std::max(period, 1)));
  }
};

// ---------------------------------------------------------------------------
// Training loop

struct TrainConfig {
  double lr0 = 1e-3;
  int step_period = 100;  // epochs
  double gamma = 0.5;
  AdamWConfig adamw;
  int batch = 16;
  int epochs = 300;
  int patience = 50;
  std::uint64_t seed = 0;
  double divergence_threshold = 1e6;
  double grad_clip = 0;   // 0 disables global-norm clipping
  double target_val = 0;  // stop once validation relative L2 falls below; 0 disables
};

struct EpochRecord {
  int epoch = 0;
  double lr = 0;
  LossBreakdown loss;
  double val_rel_l2 = 0;
  double seconds = 0;
};

// Supervised pairs plus what is needed to report denormalized metrics.
template <typename Scalar>
struct PairSet {
  std::vector<Sample<Scalar>> samples;  // normalized
  std::vector<Mat<Scalar>> raw_targets;
  NormStats<Scalar> in_stats;
  NormStats<Scalar> out_stats;

  std::size_t size() const { return samples.size(); }
};

// Compacts masks, then normalizes with the given statistics.
template <typename Scalar>
PairSet<Scalar> prepare_pairs(const std::vector<std::pair<SampledField<Scalar>, SampledField<Scalar>>>& raw,
                              const NormStats<Scalar>& in_stats, const NormStats<Scalar>& out_stats) {
  PairSet<Scalar> ps;
  ps.in_stats = in_stats;
  ps.out_stats = out_stats;
  for (const auto& [a, u] : raw) {
    SampledField<Scalar> ac = compact(a);
    SampledField<Scalar> uc = compact(u);
    ps.raw_targets.push_back(uc.values);
    ps.samples.push_back({normalize(ac, in_stats), normalize(uc, out_stats)});
  }
  return ps;
}

// Statistics over supervised points of the inputs and targets separately.
template <typename Scalar>
std::pair<NormStats<Scalar>, NormStats<Scalar>> fit_norm_stats(
    const std::vector<std::pair<SampledField<Scalar>, SampledField<Scalar>>>& raw) {
  std::vector<Mat<Scalar>> ins, outs;
  for (const auto& [a, u] : raw) {
    ins.push_back(compact(a).values);
    outs.push_back(compact(u).values);
  }
  std::vector<const Mat<Scalar>*> pi, po;
  for (const auto& m : ins) pi.push_back(&m);
  for (const auto& m : outs) po.push_back(&m);
  return {compute_norm_stats<Scalar>(pi), compute_norm_stats<Scalar>(po)};
}

// Mean per-sample relative L2 after denormalization.
template <typename Scalar>
double evaluate_rel_l2(const GPOModel<Scalar>& model, const PairSet<Scalar>& set) {
  if (set.size() == 0) return 0;
  long double acc = 0;
  for (std::size_t i = 0; i < set.size(); ++i) {
    const Mat<Scalar> pred = denormalize_values(forward(model, set.samples[i].input), set.out_stats);
    acc += relative_l2(pred, set.raw_targets[i]);
  }
  return static_cast<double>(acc / static_cast<long double>(set.size()));
}

template <typename Scalar>
struct TrainResult {
  GPOModel<Scalar> best;
  std::vector<EpochRecord> history;
  int best_epoch = -1;
  double best_val = std::numeric_limits<double>::infinity();
  bool diverged = false;
  bool early_stopped = false;
  bool reached_target = false;
  std::string fault;
};

template <typename Scalar>
TrainResult<Scalar> train(GPOModel<Scalar> model, const TrainConfig& cfg, const PairSet<Scalar>& train_set,
                          const PairSet<Scalar>& val_set, const std::function<void(const EpochRecord&)>& on_epoch = {}) {
  require_shape(train_set.size() > 0, "train: empty training set");
  TrainResult<Scalar> res;
  res.best = model;
  const StepLR sched{cfg.lr0, cfg.step_period, cfg.gamma};
  std::mt19937_64 rng(cfg.seed);
  Vec<Scalar> theta = flatten(model);
  AdamWState<Scalar> opt = AdamWState<Scalar>::zeros(theta.size());
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t bs = static_cast<std::size_t>(std::max(cfg.batch, 1));
  int since_best = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr = sched(epoch);
    std::shuffle(order.begin(), order.end(), rng);
    LossBreakdown sum;
    std::size_t nb = 0;
    try {
      for (std::size_t start = 0; start < order.size(); start += bs) {
        std::vector<const Sample<Scalar>*> batch;
        for (std::size_t i = start; i < std::min(order.size(), start + bs); ++i)
          batch.push_back(&train_set.samples[order[i]]);
        auto [g, lb] = grad<Scalar>(model, batch);
        if (!std::isfinite(lb.total) || lb.total > cfg.divergence_threshold || !g.allFinite())
          throw NumericalFault("training diverged at epoch " + std::to_string(epoch) +
                               " (loss=" + std::to_string(lb.total) + ")");
        if (cfg.grad_clip > 0) {
          const Scalar nrm = g.norm();
          if (nrm > static_cast<Scalar>(cfg.grad_clip)) g *= static_cast<Scalar>(cfg.grad_clip) / nrm;
        }
        optimizer_step(theta, g, opt, lr, cfg.adamw);
        unflatten(model, theta);
        sum += lb;
        ++nb;
      }
    } catch (const NumericalFault& e) {
      res.diverged = true;
      res.fault = e.what();
      break;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.loss = sum.scaled(1.0 / static_cast<double>(std::max<std::size_t>(nb, 1)));
    try {
      rec.val_rel_l2 = val_set.size() > 0 ? evaluate_rel_l2(model, val_set) : rec.loss.recon;
    } catch (const NumericalFault& e) {
      res.diverged = true;
      res.fault = e.what();
      break;
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    res.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (rec.val_rel_l2 < res.best_val) {
      res.best_val = rec.val_rel_l2;
      res.best_epoch = epoch;
      res.best = model;
      since_best = 0;
      if (cfg.target_val > 0 && rec.val_rel_l2 < cfg.target_val) {
        res.reached_target = true;
        break;
      }
    } else if (cfg.patience > 0 && ++since_best >= cfg.patience) {
      res.early_stopped = true;
      break;
    }
  }
  return res;
}

}  // namespace gpo
