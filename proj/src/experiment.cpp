#include "gpo/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>

namespace gpo {

namespace fs = std::filesystem;
using nlohmann::json;

void save_dataset(const TrajectoryDataset& ds, const std::string& dir) {
  fs::create_directories(dir);
  ExperimentConfig holder;
  holder.data.synth = ds.spec;
  json manifest;
  manifest["format"] = "gpo-dataset-1";
  manifest["spec"] = to_json(holder)["data"];
  manifest["trajectories"] = json::array();
  for (std::size_t i = 0; i < ds.trajectories.size(); ++i) {
    const Trajectory& t = ds.trajectories[i];
    Mat<double> stack(static_cast<Index>(t.snapshots.size()), ds.spec.n * ds.spec.n);
    for (std::size_t k = 0; k < t.snapshots.size(); ++k) stack.row(static_cast<Index>(k)) = t.snapshots[k].col(0).transpose();
    std::ostringstream name;
    name << "traj_" << std::setw(4) << std::setfill('0') << i << ".gpt1";
    save_field_tensor((fs::path(dir) / name.str()).string(), to_tensor(stack), {"u"},
                      ds.mask.size() > 0 ? "mask.gpt1" : "");
    manifest["trajectories"].push_back({{"file", name.str()}, {"split", split_name(t.split)}, {"seed", t.seed},
                                        {"snapshots", t.snapshots.size()}});
  }
  if (ds.mask.size() > 0) {
    save_tensor((fs::path(dir) / "mask.gpt1").string(), to_tensor(Vec<double>(ds.mask.cast<double>())));
    manifest["mask"] = {{"file", "mask.gpt1"}, {"masked", ds.mask.count()}};
  }
  std::ofstream(fs::path(dir) / "manifest.json") << manifest.dump(2) << "\n";
}

TrajectoryDataset load_dataset(const std::string& dir) {
  std::ifstream is(fs::path(dir) / "manifest.json");
  if (!is) throw ConfigError("data.path: no manifest.json in " + dir);
  const json manifest = json::parse(is);
  ExperimentConfig holder;
  json wrapped;
  wrapped["data"] = manifest.at("spec");
  holder = from_json(wrapped, holder);
  TrajectoryDataset ds;
  ds.spec = holder.data.synth;
  for (const auto& e : manifest.at("trajectories")) {
    Trajectory t;
    const std::string sp = e.at("split").get<std::string>();
    t.split = sp == "train" ? Split::Train : (sp == "val" ? Split::Val : Split::Test);
    t.seed = e.at("seed").get<std::uint64_t>();
    const Mat<double> stack = to_matrix<double>(load_tensor((fs::path(dir) / e.at("file").get<std::string>()).string()));
    for (Index k = 0; k < stack.rows(); ++k) t.snapshots.push_back(stack.row(k).transpose());
    ds.trajectories.push_back(std::move(t));
  }
  if (manifest.contains("mask")) {
    const Mat<double> m = to_matrix<double>(load_tensor((fs::path(dir) / "mask.gpt1").string()));
    ds.mask = (m.col(0).array() != 0.0);
  }
  return ds;
}

TrajectoryDataset load_or_make_dataset(const DataConfig& data) {
  if (!data.path.empty()) return load_dataset(data.path);
  TrajectoryDataset ds = make_dataset(data.synth, data.n_traj, data.horizon, data.split);
  if (data.mask_fraction > 0) ds = make_masked_variant(ds, MaskSpec{data.mask_fraction, data.mask_seed, 6.0});
  return ds;
}

PreparedData prepare_data(const TrajectoryDataset& ds) {
  const auto train_raw = ds.pairs(Split::Train);
  if (train_raw.empty()) throw ConfigError("data: the training split is empty");
  PreparedData p;
  std::tie(p.in_stats, p.out_stats) = fit_norm_stats(train_raw);
  p.train = prepare_pairs(train_raw, p.in_stats, p.out_stats);
  p.val = prepare_pairs(ds.pairs(Split::Val), p.in_stats, p.out_stats);
  p.test = prepare_pairs(ds.pairs(Split::Test), p.in_stats, p.out_stats);
  return p;
}

TrainingRun run_training(const ExperimentConfig& cfg, const PreparedData& data,
                         const std::function<void(const EpochRecord&)>& on_epoch) {
  const auto t0 = std::chrono::steady_clock::now();
  GPOModel<double> model = make_model<double>(cfg.model, cfg.training.seed);
  TrainingRun run{train(std::move(model), cfg.training, data.train, data.val, on_epoch)};
  run.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  run.test_rel_l2 = data.test.size() > 0 ? evaluate_rel_l2(run.result.best, data.test) : 0.0;
  return run;
}

GradCheckReport run_grad_check(const ExperimentConfig& cfg, Index coords, double h) {
  const GPOModel<double> model = make_model<double>(cfg.model, cfg.training.seed);
  const PointSet<double> pts = grid_points<double>(cfg.data.synth.n, cfg.model.dim);
  std::vector<Sample<double>> samples;
  std::mt19937_64 rng(cfg.training.seed + 1);
  std::normal_distribution<double> normal(0, 1);
  for (int b = 0; b < std::max(cfg.training.batch, 1); ++b) {
    Mat<double> a(pts.size(), cfg.model.c_in), u(pts.size(), cfg.model.c_out);
    for (Index i = 0; i < a.size(); ++i) a.data()[i] = normal(rng);
    for (Index i = 0; i < u.size(); ++i) u.data()[i] = normal(rng);
    samples.push_back({SampledField<double>(pts, a), SampledField<double>(pts, u)});
  }
  return check_gradients(model, as_batch(samples), coords, h, cfg.training.seed);
}

void write_history_csv(const std::string& path, const std::vector<EpochRecord>& history) {
  std::ofstream os(path);
  os << std::setprecision(17) << "epoch,lr,recon,reg_mu,reg_sigma,val_rel_l2\n";
  for (const auto& r : history)
    os << r.epoch << ',' << r.lr << ',' << r.loss.recon << ',' << r.loss.reg_mu << ',' << r.loss.reg_sigma << ','
       << r.val_rel_l2 << '\n';
}

json history_json(const std::vector<EpochRecord>& history) {
  json arr = json::array();
  for (const auto& r : history)
    arr.push_back({{"epoch", r.epoch},
                   {"lr", r.lr},
                   {"recon", r.loss.recon},
                   {"reg_mu", r.loss.reg_mu},
                   {"reg_sigma", r.loss.reg_sigma},
                   {"total", r.loss.total},
                   {"val_rel_l2", r.val_rel_l2},
                   {"seconds", r.seconds}});
  return arr;
}

RolloutSummary rollout_test_set(const GPOModel<double>& model, const NormStats<double>& in_stats,
                                const NormStats<double>& out_stats, const TrajectoryDataset& ds, Index T) {
  RolloutSummary s;
  const StepFn step = model_step(model, in_stats, out_stats);
  std::vector<Index> counts;
  for (const Trajectory* tp : ds.of_split(Split::Test)) {
    const Trajectory t = extend_trajectory(ds.spec, *tp, T + 1);
    const SampledField<double> init = compact(ds.field(t.snapshots[0]));
    std::vector<Mat<double>> truth;
    for (Index k = 1; k <= T; ++k) truth.push_back(compact(ds.field(t.snapshots[static_cast<std::size_t>(k)])).values);
    RolloutReport r = rollout(step, init, T, truth);
    if (r.diverged) ++s.diverged;
    for (std::size_t k = 0; k < r.rel_l2.size(); ++k) {
      if (s.mean_curve.size() <= k) {
        s.mean_curve.push_back(0);
        counts.push_back(0);
      }
      s.mean_curve[k] += r.rel_l2[k];
      ++counts[k];
    }
    s.reports.push_back(std::move(r));
  }
  for (std::size_t k = 0; k < s.mean_curve.size(); ++k) s.mean_curve[k] /= static_cast<double>(counts[k]);
  return s;
}

namespace {

template <typename F>
double median_seconds(F&& f, int repeats) {
  std::vector<double> t;
  for (int r = 0; r < repeats; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    f();
    t.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  std::sort(t.begin(), t.end());
  return t[t.size() / 2];
}

}  // namespace

template <typename Scalar>
ScalingReport bench_scaling(const ModelConfig& model, const std::vector<Index>& Ns, int repeats, std::uint64_t seed) {
  require_shape(Ns.size() >= 2, "bench_scaling: need at least two sizes");
  const Index G = model.num_gaussians, d = model.dim, D = model.resolved_head_dim(), H = model.num_heads;
  std::mt19937_64 rng(seed);
  PGAttentionParams<Scalar> p = PGAttentionParams<Scalar>::random(G, d, D, H, rng, model.tie_wz);
  p.lambda = static_cast<Scalar>(model.lambda);
  p.eps = static_cast<Scalar>(model.eps);
  ScalingReport rep;
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (Index N : Ns) {
    GaussianField<Scalar> gf = GaussianField<Scalar>::zeros(N, G, d);
    for (Index j = 0; j < N; ++j) {
      Scalar total = 0;
      for (Index i = 0; i < G; ++i) {
        gf.w(j, i) = static_cast<Scalar>(0.1 + unif(rng));
        total += gf.w(j, i);
        for (Index a = 0; a < d; ++a) {
          gf.mu(j, i * d + a) = static_cast<Scalar>(unif(rng));
          gf.sigma(j, i * d + a) = static_cast<Scalar>(0.05 + 0.2 * unif(rng));
        }
      }
      gf.w.row(j) /= total;
    }
    Mat<Scalar> Z = (gf.w.array() * Mat<Scalar>::NullaryExpr(N, G, [&] { return static_cast<Scalar>(unif(rng)); }).array()).matrix();
    ScalingPoint pt;
    pt.N = N;
    pt.layer_seconds = median_seconds([&] { (void)pg_layer(Z, gf, p); }, repeats);
    const ModalWindows<Scalar> win = build_windows(Z, gf, p);
    const ModalTokens<Scalar> tok = measure(Z, win, p, true);
    const int inner = 50;
    pt.attention_seconds = median_seconds([&] {
      for (int r = 0; r < inner; ++r) (void)modal_attention(tok, p);
    }, repeats) / inner;
    rep.points.push_back(pt);
  }
  std::vector<double> x, y;
  for (const auto& pt : rep.points) {
    x.push_back(static_cast<double>(pt.N));
    y.push_back(pt.layer_seconds);
  }
  rep.exponent = loglog_slope(x, y, 0, 1e300);
  rep.attention_ratio = rep.points.back().attention_seconds / rep.points.front().attention_seconds;
  return rep;
}

template ScalingReport bench_scaling<double>(const ModelConfig&, const std::vector<Index>&, int, std::uint64_t);
template ScalingReport bench_scaling<float>(const ModelConfig&, const std::vector<Index>&, int, std::uint64_t);

}  // namespace gpo
