// gpo: data generation, training, evaluation and diagnostics for the
// Gaussian particle operator.

#include "gpo/experiment.hpp"
#include "gpo/lemma1.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numbers>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace gpo;

namespace {

enum Exit { kOk = 0, kConfig = 2, kNumerical = 3, kAcceptance = 4 };

struct Common {
  std::string config;
  std::vector<std::string> presets;
  std::int64_t seed = -1;
  std::string out = "gpo_out";
  int threads = 1;
  std::string precision;
  std::string checkpoint;
};

struct Run {
  ExperimentConfig cfg;
  std::string command;
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
  json extra = json::object();
};

ExperimentConfig resolve_config(const Common& c) {
  ExperimentConfig cfg = default_config();
  if (!c.config.empty()) cfg = load_config(c.config, cfg);
  for (const auto& p : c.presets) apply_preset(cfg, p);
  if (c.seed >= 0) {
    cfg.training.seed = static_cast<std::uint64_t>(c.seed);
    cfg.data.synth.seed = static_cast<std::uint64_t>(c.seed);
  }
  if (!c.precision.empty()) cfg.precision = c.precision;
  if (c.threads < 1) throw ConfigError("threads: must be >= 1");
  cfg.validate();
  return cfg;
}

void write_json(const fs::path& p, const json& j) { std::ofstream(p) << j.dump(2) << "\n"; }

void write_manifest(const Common& c, const Run& run) {
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - run.start).count();
  json m;
  m["command"] = run.command;
  m["config"] = to_json(run.cfg);
  m["config_hash"] = config_hash(run.cfg);
  m["version"] = GPO_VERSION;
  m["eigen"] = std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
               std::to_string(EIGEN_MINOR_VERSION);
#if defined(__clang__)
  m["compiler"] = std::string("clang ") + __clang_version__;
#elif defined(__GNUC__)
  m["compiler"] = std::string("gcc ") + __VERSION__;
#endif
  m["threads"] = c.threads;
  m["wall_clock_seconds"] = secs;
  m["finished_at_unix"] = static_cast<std::int64_t>(std::time(nullptr));
  m["outputs"] = run.extra;
  write_json(fs::path(c.out) / "manifest.json", m);
}

void require_f64(const ExperimentConfig& cfg, const std::string& cmd) {
  if (cfg.precision != "f64")
    throw ConfigError("training.precision: " + cmd + " runs in f64 only; f32 is available to bench-scaling");
}

Checkpoint need_checkpoint(const Common& c) {
  if (c.checkpoint.empty()) throw ConfigError("checkpoint: --checkpoint is required");
  if (!fs::exists(c.checkpoint)) throw std::runtime_error("checkpoint not found: " + c.checkpoint);
  return load_checkpoint(c.checkpoint);
}

int cmd_gen_data(const Common& c, Run& run) {
  const TrajectoryDataset ds = load_or_make_dataset(run.cfg.data);
  const fs::path dir = fs::path(c.out) / "dataset";
  save_dataset(ds, dir.string());
  run.extra = {{"dataset", dir.string()},
               {"train", ds.count(Split::Train)},
               {"val", ds.count(Split::Val)},
               {"test", ds.count(Split::Test)},
               {"pairs_train", ds.pairs(Split::Train).size()}};
  std::cout << "wrote " << ds.trajectories.size() << " trajectories to " << dir.string() << "\n";
  return kOk;
}

int cmd_train(const Common& c, Run& run) {
  require_f64(run.cfg, "train");
  const TrajectoryDataset ds = load_or_make_dataset(run.cfg.data);
  const PreparedData data = prepare_data(ds);
  std::ofstream log(fs::path(c.out) / "train.log");
  const TrainingRun tr = run_training(run.cfg, data, [&](const EpochRecord& r) {
    log << "epoch " << r.epoch << " lr " << r.lr << " recon " << r.loss.recon << " val " << r.val_rel_l2 << "\n";
    log.flush();
  });
  const fs::path ck = fs::path(c.out) / "checkpoint.gpock";
  save_checkpoint(ck.string(), Checkpoint{run.cfg, tr.result.best, data.in_stats, data.out_stats});
  write_history_csv((fs::path(c.out) / "history.csv").string(), tr.result.history);
  json summary = {{"best_epoch", tr.result.best_epoch},
                  {"best_val_rel_l2", tr.result.best_val},
                  {"test_rel_l2", tr.test_rel_l2},
                  {"epochs_run", tr.result.history.size()},
                  {"early_stopped", tr.result.early_stopped},
                  {"reached_target", tr.result.reached_target},
                  {"diverged", tr.result.diverged},
                  {"fault", tr.result.fault},
                  {"parameters", tr.result.best.parameter_count()},
                  {"seconds", tr.seconds},
                  {"history", history_json(tr.result.history)}};
  write_json(fs::path(c.out) / "summary.json", summary);
  run.extra = {{"checkpoint", ck.string()}, {"best_val_rel_l2", tr.result.best_val}, {"test_rel_l2", tr.test_rel_l2}};
  std::cout << "best val rel L2 " << tr.result.best_val << " (epoch " << tr.result.best_epoch << "), test " << tr.test_rel_l2
            << "\n";
  if (tr.result.diverged) {
    std::cerr << "training diverged: " << tr.result.fault << " (best checkpoint kept)\n";
    return kNumerical;
  }
  return kOk;
}

int cmd_eval(const Common& c, Run& run) {
  const Checkpoint ck = need_checkpoint(c);
  run.cfg.model = ck.config.model;
  const TrajectoryDataset ds = load_or_make_dataset(run.cfg.data);
  const auto prep = [&](Split s) { return prepare_pairs(ds.pairs(s), ck.in_stats, ck.out_stats); };
  const double val = evaluate_rel_l2(ck.model, prep(Split::Val));
  const double test = evaluate_rel_l2(ck.model, prep(Split::Test));
  json r = {{"val_rel_l2", val}, {"test_rel_l2", test}};
  write_json(fs::path(c.out) / "eval.json", r);
  run.extra = r;
  std::cout << "val " << val << " test " << test << "\n";
  return kOk;
}

int cmd_rollout(const Common& c, Run& run) {
  const Checkpoint ck = need_checkpoint(c);
  run.cfg.model = ck.config.model;
  const TrajectoryDataset ds = load_or_make_dataset(run.cfg.data);
  const RolloutSummary s = rollout_test_set(ck.model, ck.in_stats, ck.out_stats, ds, run.cfg.eval.rollout_T);
  std::ofstream csv(fs::path(c.out) / "rollout.csv");
  csv << std::setprecision(17) << "step,mean_rel_l2\n";
  for (std::size_t k = 0; k < s.mean_curve.size(); ++k) csv << k + 1 << ',' << s.mean_curve[k] << '\n';
  json per = json::array();
  for (const auto& r : s.reports) per.push_back({{"rel_l2", r.rel_l2}, {"diverged", r.diverged}});
  write_json(fs::path(c.out) / "rollout.json", {{"T", run.cfg.eval.rollout_T}, {"mean", s.mean_curve}, {"trajectories", per}});
  run.extra = {{"steps", s.mean_curve.size()}, {"diverged", s.diverged}};
  std::cout << "rollout steps " << s.mean_curve.size() << ", final mean rel L2 "
            << (s.mean_curve.empty() ? 0.0 : s.mean_curve.back()) << "\n";
  return s.diverged > 0 ? kNumerical : kOk;
}

json spectrum_json(const SpectrumReport& s) {
  return {{"k", s.k}, {"E", s.E}, {"slope", s.slope}, {"k_lo", s.k_lo}, {"k_hi", s.k_hi}, {"total", s.total()}};
}

int cmd_spectrum(const Common& c, Run& run, const std::string& input) {
  const double lo = run.cfg.eval.k_lo, hi = run.cfg.eval.k_hi;
  json r;
  if (!input.empty()) {
    const Mat<double> m = to_matrix<double>(load_tensor(input));
    const Index n = static_cast<Index>(std::lround(std::sqrt(static_cast<double>(m.rows()))));
    const Mat<double> grid = m.rows() == m.cols() ? m : unflatten_grid(m.col(0), n);
    r["input"] = spectrum_json(energy_spectrum(grid, lo, hi));
  } else {
    const Checkpoint ck = need_checkpoint(c);
    run.cfg.model = ck.config.model;
    const TrajectoryDataset ds = load_or_make_dataset(run.cfg.data);
    if (ds.mask.size() > 0) throw ConfigError("data.mask_fraction: the spectrum needs a full periodic grid");
    const auto pairs = ds.pairs(Split::Test);
    if (pairs.empty()) throw ConfigError("data: the test split is empty");
    const Mat<double> pred = model_step(ck.model, ck.in_stats, ck.out_stats)(pairs.front().first);
    r["truth"] = spectrum_json(energy_spectrum(unflatten_grid(pairs.front().second.values, ds.spec.n), lo, hi));
    r["prediction"] = spectrum_json(energy_spectrum(unflatten_grid(pred, ds.spec.n), lo, hi));
  }
  write_json(fs::path(c.out) / "spectrum.json", r);
  std::ofstream csv(fs::path(c.out) / "spectrum.csv");
  csv << std::setprecision(17);
  for (auto it = r.begin(); it != r.end(); ++it) {
    const auto& k = (*it)["k"];
    const auto& E = (*it)["E"];
    for (std::size_t i = 0; i < k.size(); ++i) csv << it.key() << ',' << k[i].get<double>() << ',' << E[i].get<double>() << '\n';
  }
  run.extra = {{"series", r.size()}};
  std::cout << "spectrum written\n";
  return kOk;
}

int cmd_grad_check(const Common& c, Run& run, int coords, double h) {
  require_f64(run.cfg, "grad-check");
  const GradCheckReport rep = run_grad_check(run.cfg, coords, h);
  json entries = json::array();
  for (const auto& e : rep.entries)
    entries.push_back({{"name", e.name}, {"index", e.flat_index}, {"analytic", e.analytic}, {"numeric", e.numeric},
                       {"rel_error", e.rel_error}});
  const bool ok = rep.passed(1e-4);
  json r = {{"max_rel_error", rep.max_rel_error}, {"median_rel_error", rep.median_rel_error}, {"step", h},
            {"coordinates", rep.entries.size()}, {"parameters", rep.parameter_count}, {"seconds", rep.seconds},
            {"tolerance", 1e-4}, {"passed", ok}, {"entries", entries}};
  write_json(fs::path(c.out) / "grad_check.json", r);
  run.extra = {{"max_rel_error", rep.max_rel_error}, {"passed", ok}};
  std::cout << "max rel error " << rep.max_rel_error << " median " << rep.median_rel_error << " over "
            << rep.entries.size() << " coordinates (" << rep.seconds << " s)\n";
  return ok ? kOk : kAcceptance;
}

int cmd_bench(const Common& c, Run& run, int repeats) {
  const std::vector<Index> Ns{1000, 2000, 4000, 8000};
  const ScalingReport rep = run.cfg.precision == "f32" ? bench_scaling<float>(run.cfg.model, Ns, repeats, run.cfg.training.seed)
                                                       : bench_scaling<double>(run.cfg.model, Ns, repeats, run.cfg.training.seed);
  json pts = json::array();
  std::ofstream csv(fs::path(c.out) / "scaling.csv");
  csv << std::setprecision(10) << "N,layer_seconds,attention_seconds\n";
  for (const auto& p : rep.points) {
    pts.push_back({{"N", p.N}, {"layer_seconds", p.layer_seconds}, {"attention_seconds", p.attention_seconds}});
    csv << p.N << ',' << p.layer_seconds << ',' << p.attention_seconds << '\n';
  }
  const bool ok = rep.exponent >= 0.8 && rep.exponent <= 1.2 && std::abs(rep.attention_ratio - 1) <= 0.2;
  json r = {{"points", pts}, {"exponent", rep.exponent}, {"attention_ratio", rep.attention_ratio}, {"passed", ok},
            {"G", run.cfg.model.num_gaussians}, {"D", run.cfg.model.resolved_head_dim()}, {"H", run.cfg.model.num_heads},
            {"precision", run.cfg.precision}};
  write_json(fs::path(c.out) / "scaling.json", r);
  run.extra = {{"exponent", rep.exponent}, {"attention_ratio", rep.attention_ratio}, {"passed", ok}};
  std::cout << "fitted exponent " << rep.exponent << ", attention time ratio N=8k/1k " << rep.attention_ratio << "\n";
  return ok ? kOk : kAcceptance;
}

int cmd_export(const Common& c, Run& run) {
  const Checkpoint ck = need_checkpoint(c);
  run.cfg.model = ck.config.model;
  const TrajectoryDataset ds = load_or_make_dataset(run.cfg.data);
  auto pairs = ds.pairs(Split::Test);
  if (pairs.empty()) pairs = ds.pairs(Split::Train);
  const auto& [a, u] = pairs.front();
  const ExportSummary s = export_overlays(ck.model, ck.in_stats, ck.out_stats, a, compact(u).values,
                                          (fs::path(c.out) / "overlays").string());
  run.extra = {{"files", s.files}, {"particles", s.particle_count}};
  std::cout << "exported " << s.files.size() << " files, " << s.particle_count << " particles\n";
  return kOk;
}

int cmd_lemma1(const Common& c, Run& run, double eps, const std::vector<int>& grids) {
  const GridSamples target = sample_on_grid([](const Vec<double>& x) { return std::sin(2 * std::numbers::pi * x(0)); }, 2001);
  json rows = json::array();
  std::vector<double> errs;
  for (int g : grids) {
    const Lemma1Report r = lemma1_construct(target, eps, g);
    errs.push_back(r.interior_sup_error);
    rows.push_back({{"grid_G", g}, {"sup_error", r.sup_error}, {"interior_sup_error", r.interior_sup_error}});
    std::cout << "grid_G " << g << ": interior sup error " << r.interior_sup_error << ", sup error " << r.sup_error << "\n";
  }
  bool monotone = true;
  for (std::size_t i = 1; i < errs.size(); ++i) monotone = monotone && errs[i] <= 1.1 * errs[i - 1];
  const bool ok = monotone && !errs.empty() && errs.back() < 0.01;
  write_json(fs::path(c.out) / "lemma1.json",
             {{"target", "sin(2 pi x)"}, {"eps_moll", eps}, {"rows", rows}, {"monotone", monotone}, {"passed", ok}});
  run.extra = {{"passed", ok}};
  return ok ? kOk : kAcceptance;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gaussian particle operator: synthetic data, training, diagnostics"};
  app.require_subcommand(1);
  Common c;
  auto add_common = [&](CLI::App* s) {
    s->add_option("--config", c.config, "JSON experiment config")->check(CLI::ExistingFile);
    s->add_option("--preset", c.presets, "preset(s) applied after the config, in order");
    s->add_option("--seed", c.seed, "overrides training and data seeds");
    s->add_option("--out", c.out, "output directory");
    s->add_option("--threads", c.threads, "worker threads (1 = reproducible)");
    s->add_option("--precision", c.precision, "f64 or f32 (f32: bench-scaling only)");
  };
  auto add_ckpt = [&](CLI::App* s) { s->add_option("--checkpoint", c.checkpoint, "checkpoint written by train"); };

  auto* gen = app.add_subcommand("gen-data", "synthesize an advection-diffusion dataset");
  auto* trn = app.add_subcommand("train", "train a model and write the best checkpoint");
  auto* evl = app.add_subcommand("eval", "one-step relative L2 on val/test splits");
  auto* rol = app.add_subcommand("rollout", "autoregressive rollout curve on the test split");
  auto* spc = app.add_subcommand("spectrum", "energy spectrum of truth and prediction (or of a GPT1 field)");
  auto* grd = app.add_subcommand("grad-check", "finite-difference gradient verification");
  auto* bnc = app.add_subcommand("bench-scaling", "pg_layer wall-clock versus N");
  auto* exp = app.add_subcommand("export-particles", "particle, field and layer exports for plotting");
  auto* lem = app.add_subcommand("lemma1-demo", "constructive Gaussian-mixture approximation sweep");
  for (auto* s : {gen, trn, evl, rol, spc, grd, bnc, exp, lem}) add_common(s);
  for (auto* s : {evl, rol, spc, exp}) add_ckpt(s);
  std::string spectrum_input;
  spc->add_option("--input", spectrum_input, "GPT1 field (n x n, or n^2 x 1)")->check(CLI::ExistingFile);
  int gc_coords = 200;
  double gc_h = 1e-5;
  grd->add_option("--coords", gc_coords, "sampled coordinates");
  grd->add_option("--step", gc_h, "central-difference step");
  int repeats = 5;
  bnc->add_option("--repeats", repeats, "timing repeats per N");
  double eps_moll = 0.02;
  std::vector<int> grids{16, 32, 64, 128};
  lem->add_option("--eps", eps_moll, "mollifier width");
  lem->add_option("--grids", grids, "node counts per axis");

  CLI11_PARSE(app, argc, argv);
  try {
    Run run;
    run.command = app.get_subcommands().front()->get_name();
    if (run.command == "grad-check" && c.presets.empty() && c.config.empty()) c.presets.push_back("tiny");
    run.cfg = resolve_config(c);
    Eigen::setNbThreads(c.threads);
    fs::create_directories(c.out);
    int code = kOk;
    if (*gen) code = cmd_gen_data(c, run);
    else if (*trn) code = cmd_train(c, run);
    else if (*evl) code = cmd_eval(c, run);
    else if (*rol) code = cmd_rollout(c, run);
    else if (*spc) code = cmd_spectrum(c, run, spectrum_input);
    else if (*grd) code = cmd_grad_check(c, run, gc_coords, gc_h);
    else if (*bnc) code = cmd_bench(c, run, repeats);
    else if (*exp) code = cmd_export(c, run);
    else if (*lem) code = cmd_lemma1(c, run, eps_moll, grids);
    write_manifest(c, run);
    return code;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const NumericalFault& e) {
    std::cerr << "numerical fault: " << e.what() << "\n";
    return kNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
