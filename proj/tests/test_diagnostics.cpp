#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "gpo/diagnostics.hpp"
#include "gpo/experiment.hpp"
#include "gpo/metrics.hpp"
#include "gpo/synth.hpp"
#include "gpo/tensor_io.hpp"
#include "support.hpp"

#include <filesystem>
#include <fstream>
#include <numbers>

using namespace gpo;
using support::M;
namespace fs = std::filesystem;

namespace {

constexpr double kTau = 2 * std::numbers::pi;

M mode(Index n, int kx, int ky, double amp) {
  M u(n, n);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j)
      u(i, j) = amp * std::cos(kTau * (kx * static_cast<double>(i) + ky * static_cast<double>(j)) / static_cast<double>(n));
  return u;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("gpo_diag_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("relative L2 reference values") {
  std::mt19937_64 rng(1);
  const M truth = support::normal(50, 2, rng);
  CHECK(relative_l2(truth, truth) == 0.0);
  CHECK(relative_l2(M(M::Zero(50, 2)), truth) == 1.0);
  M delta = support::normal(50, 2, rng);
  delta *= 0.1 * truth.norm() / delta.norm();
  CHECK(std::abs(relative_l2(M(truth + delta), truth) - 0.1) < 1e-12);
  CHECK(relative_l2(M(truth + 3.0 * delta), truth) == doctest::Approx(0.3).epsilon(1e-12));
}

TEST_CASE("rollout with a perfect stub is error free") {
  SynthSpec spec;
  spec.n = 16;
  const auto ds = make_dataset(spec, 1, 6);
  const auto& snaps = ds.trajectories[0].snapshots;
  std::size_t t = 0;
  const StepFn oracle_step = [&](const SampledField<double>&) { return snaps[++t]; };
  const std::vector<M> truth(snaps.begin() + 1, snaps.end());
  const auto rep = rollout(oracle_step, ds.field(snaps[0]), 5, truth);
  REQUIRE(rep.rel_l2.size() == 5);
  for (double e : rep.rel_l2) CHECK(e == 0.0);
  CHECK_FALSE(rep.diverged);
}

TEST_CASE("identity rollout against decaying diffusion grows monotonically") {
  SynthSpec spec;
  spec.n = 16;
  spec.velocity.kind = VelocityKind::Zero;
  spec.nu = 0.01;
  const auto ds = make_dataset(spec, 1, 21);
  const auto& snaps = ds.trajectories[0].snapshots;
  const StepFn identity = [](const SampledField<double>& u) { return u.values; };
  const auto rep = rollout(identity, ds.field(snaps[0]), 20, std::vector<M>(snaps.begin() + 1, snaps.end()));
  REQUIRE(rep.rel_l2.size() == 20);
  for (std::size_t k = 1; k < 20; ++k) CHECK(rep.rel_l2[k] > rep.rel_l2[k - 1]);
}

TEST_CASE("rollout truncates on divergence") {
  SynthSpec spec;
  spec.n = 8;
  const auto ds = make_dataset(spec, 1, 11);
  const auto& snaps = ds.trajectories[0].snapshots;
  const StepFn blowup = [](const SampledField<double>& u) { return M(4.0 * u.values); };
  const auto rep = rollout(blowup, ds.field(snaps[0]), 10, std::vector<M>(snaps.begin() + 1, snaps.end()));
  CHECK(rep.diverged);
  CHECK(rep.rel_l2.size() < 10);
  for (double e : rep.rel_l2) CHECK(e <= 10);
  CHECK_THROWS_AS(rollout(blowup, ds.field(snaps[0]), 11, std::vector<M>(snaps.begin() + 1, snaps.end())), ShapeError);
}

TEST_CASE("first rollout step equals the one-step evaluation") {
  SynthSpec spec;
  spec.n = 8;
  const auto ds = make_dataset(spec, 1, 3, {1.0, 0.0, 0.0});
  const auto data = prepare_data(ds);
  const auto m = make_model<double>(support::tiny_config(), 2);
  const auto& snaps = ds.trajectories[0].snapshots;
  const auto rep = rollout(model_step(m, data.in_stats, data.out_stats), ds.field(snaps[0]), 1, {snaps[1]});
  PairSet<double> first = data.train;
  first.samples.resize(1);
  first.raw_targets.resize(1);
  CHECK(rep.rel_l2.at(0) == evaluate_rel_l2(m, first));
}

TEST_CASE("single Fourier mode lands in one shell") {
  for (auto [kx, ky, bin] : {std::tuple{4, 0, 4}, std::tuple{0, 4, 4}, std::tuple{3, 3, 4}, std::tuple{2, 5, 5}}) {
    const double a = 1.3;
    const auto s = energy_spectrum(mode(32, kx, ky, 2 * a));
    // complex amplitude a on the two modes +k and -k
    CHECK(s.E[static_cast<std::size_t>(bin)] == doctest::Approx(0.5 * a * a * 2).epsilon(1e-12));
    for (std::size_t k = 0; k < s.E.size(); ++k)
      if (k != static_cast<std::size_t>(bin)) CHECK(s.E[k] < 1e-14);
  }
}

TEST_CASE("Parseval: shells sum to half the mean square") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    std::mt19937_64 rng(seed);
    M u = support::normal(32, 32, rng);
    u.array() += 0.7;
    const auto s = energy_spectrum(u);
    CHECK(std::abs(s.total() / (0.5 * u.squaredNorm() / 1024.0) - 1.0) < 1e-8);
    const double var = (u.array() - u.mean()).square().mean();
    CHECK(std::abs(s.total_without_mean() / (0.5 * var) - 1.0) < 1e-8);
  }
}

TEST_CASE("white noise slope reflects shell growth") {
  std::mt19937_64 rng(3);
  std::vector<M> channels;
  for (int c = 0; c < 16; ++c) channels.push_back(support::normal(32, 32, rng));
  const auto s = energy_spectrum(channels, 4, 12);
  CHECK(s.fit_points == 9);
  CHECK(std::abs(s.slope - 1.0) < 0.15);
}

TEST_CASE("log-log slope of an exact power law") {
  std::vector<double> k, E;
  for (int i = 1; i <= 20; ++i) {
    k.push_back(i);
    E.push_back(3.0 * std::pow(i, -5.0 / 3.0));
  }
  Index used = 0;
  CHECK(loglog_slope(k, E, 4, 12, &used) == doctest::Approx(-5.0 / 3.0).epsilon(1e-12));
  CHECK(used == 9);
  CHECK_THROWS_AS(loglog_slope(k, E, 30, 40), DomainError);
}

TEST_CASE("spectrum rejects non-square grids") {
  CHECK_THROWS_AS(energy_spectrum(M(M::Zero(8, 6))), ShapeError);
  CHECK_THROWS_AS(energy_spectrum(std::vector<M>{M::Zero(8, 8), M::Zero(16, 16)}), ShapeError);
}

TEST_CASE("layer diagnostics are stochastic and conserved") {
  std::mt19937_64 rng(4);
  const auto m = make_model<double>(support::tiny_config(), 4);
  const auto d = layer_diagnostics(m, support::field(16, 2, 1, rng));
  REQUIRE(d.alpha.size() == 2);
  REQUIRE(d.activation.size() == 3);
  for (const auto& layer : d.alpha)
    for (const auto& a : layer) CHECK(((a.rowwise().sum().array() - 1).abs() < 1e-12).all());
  for (const auto& layer : d.window_entropy)
    for (const auto& e : layer) {
      CHECK(e.minCoeff() >= -1e-12);
      CHECK(e.maxCoeff() <= std::log(4.0) + 1e-12);
    }
  for (std::size_t k = 1; k < d.activation.size(); ++k)
    CHECK((d.activation[k] - d.activation[0]).cwiseAbs().maxCoeff() < 1e-10);
  const auto j = to_json(d);
  CHECK(j["layers"].size() == 2);
  CHECK(j["layers"][0]["heads"].size() == 2);
}

TEST_CASE("overlay export round-trips") {
  SynthSpec spec;
  spec.n = 8;
  const auto ds = make_dataset(spec, 1, 2, {1.0, 0.0, 0.0});
  const auto data = prepare_data(ds);
  const auto m = make_model<double>(support::tiny_config(), 5);
  const auto [a, u] = ds.pairs(Split::Train).front();
  const fs::path dir = scratch("overlays");
  const auto s = export_overlays(m, data.in_stats, data.out_stats, a, u.values, dir.string());
  CHECK(s.particle_count == 64 * 4);
  for (const auto& f : s.files) CHECK(fs::exists(f));
  for (const char* f : {"coords.gpt1", "pred.gpt1", "truth.gpt1", "error.gpt1", "particles.json", "layers.json",
                        "z_stage0.gpt1", "z_stage2.gpt1", "pred.gpt1.json"})
    CHECK(fs::exists(dir / f));
  const M pred = to_matrix<double>(load_tensor((dir / "pred.gpt1").string()));
  const M truth = to_matrix<double>(load_tensor((dir / "truth.gpt1").string()));
  const M err = to_matrix<double>(load_tensor((dir / "error.gpt1").string()));
  CHECK(truth == u.values);
  CHECK(err == (pred - truth).cwiseAbs());
  CHECK(pred == model_step(m, data.in_stats, data.out_stats)(a));
  std::ifstream pj(dir / "particles.json");
  CHECK(nlohmann::json::parse(pj).size() == 256);
  fs::remove_all(dir);
}
