#include "gpo/synth.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>

namespace gpo {

namespace {
constexpr double kTwoPi = 2 * std::numbers::pi;
}

double VelocitySpec::max_speed() const {
  switch (kind) {
    case VelocityKind::Zero:
      return 0;
    case VelocityKind::Uniform:
      return std::hypot(ux, uy);
    case VelocityKind::Shear:
      return std::hypot(std::abs(ux) + std::abs(amp), std::abs(uy) + std::abs(amp));
  }
  return 0;
}

double SynthSpec::stable_dt() const {
  double bound = std::numeric_limits<double>::infinity();
  const double vmax = velocity.max_speed();
  if (vmax > 0) bound = std::min(bound, dx() / vmax);
  if (nu > 0) bound = std::min(bound, dx() * dx() / (4 * nu));
  return 0.5 * bound;
}

void SynthSpec::validate() const {
  if (n < 4 || n % 2 != 0) throw ConfigError("data.n: must be an even grid size >= 4");
  if (!(nu >= 0)) throw ConfigError("data.nu: must be >= 0");
  if (!(dt > 0)) throw ConfigError("data.dt: must be positive");
  if (steps_per_pair < 1) throw ConfigError("data.steps_per_pair: must be >= 1");
  if (!(spectrum_p >= 0)) throw ConfigError("data.spectrum_p: must be >= 0");
  if (dt > stable_dt())
    throw ConfigError("data.dt: " + std::to_string(dt) + " exceeds the stability bound " + std::to_string(stable_dt()));
}

Mat<double> grf_init(Index n, double p, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Mat<double> noise(n, n);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j) noise(i, j) = normal(rng);
  MatC h = fft2(noise);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j) {
      const Index kx = wavenumber(i, n), ky = wavenumber(j, n);
      const bool nyquist = i == n / 2 || j == n / 2;
      if ((kx == 0 && ky == 0) || nyquist) {
        h(i, j) = 0;
        continue;
      }
      const double k = std::hypot(static_cast<double>(kx), static_cast<double>(ky));
      h(i, j) *= std::pow(k, -0.5 * p);
    }
  Mat<double> u = ifft2_real(h);
  u.array() -= u.mean();
  const double var = u.squaredNorm() / static_cast<double>(u.size());
  if (var > 0) u /= std::sqrt(var);
  return u;
}

AdvectionDiffusionSolver::AdvectionDiffusionSolver(const SynthSpec& spec) : spec_(spec) {
  spec_.validate();
  const Index n = spec_.n;
  vx_.resize(n, n);
  vy_.resize(n, n);
  const VelocitySpec& v = spec_.velocity;
  for (Index ix = 0; ix < n; ++ix)
    for (Index iy = 0; iy < n; ++iy) {
      const double x = static_cast<double>(ix) / n, y = static_cast<double>(iy) / n;
      switch (v.kind) {
        case VelocityKind::Zero:
          vx_(ix, iy) = vy_(ix, iy) = 0;
          break;
        case VelocityKind::Uniform:
          vx_(ix, iy) = v.ux;
          vy_(ix, iy) = v.uy;
          break;
        case VelocityKind::Shear:
          vx_(ix, iy) = v.ux + v.amp * std::sin(kTwoPi * y);
          vy_(ix, iy) = v.uy + v.amp * std::sin(kTwoPi * x);
          break;
      }
    }
  ikx_.resize(n, n);
  iky_.resize(n, n);
  E_.resize(n, n);
  E2_.resize(n, n);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j) {
      const double kx = kTwoPi * static_cast<double>(wavenumber(i, n));
      const double ky = kTwoPi * static_cast<double>(wavenumber(j, n));
      ikx_(i, j) = i == n / 2 ? Complex(0) : Complex(0, kx);
      iky_(i, j) = j == n / 2 ? Complex(0) : Complex(0, ky);
      const double L = -spec_.nu * (kx * kx + ky * ky);
      E_(i, j) = std::exp(L * spec_.dt);
      E2_(i, j) = std::exp(L * spec_.dt / 2);
    }
}

MatC AdvectionDiffusionSolver::rhs(const MatC& uh) const {
  if (spec_.velocity.kind == VelocityKind::Zero) return MatC::Zero(uh.rows(), uh.cols());
  const Mat<double> ux = ifft2_real(ikx_.cwiseProduct(uh));
  const Mat<double> uy = ifft2_real(iky_.cwiseProduct(uh));
  return fft2((-(vx_.cwiseProduct(ux) + vy_.cwiseProduct(uy))).eval());
}

// Lawson integrating-factor RK4 on u_t = L u + N(u).
Mat<double> AdvectionDiffusionSolver::step(const Mat<double>& u) const {
  require_shape(u.rows() == spec_.n && u.cols() == spec_.n, "step: field is not n x n");
  const MatC v = fft2(u);
  const MatC E = E_.cast<Complex>(), E2 = E2_.cast<Complex>();
  const double dt = spec_.dt;
  const MatC a = dt * rhs(v);
  const MatC b = dt * rhs(E2.cwiseProduct(v + 0.5 * a));
  const MatC c = dt * rhs(E2.cwiseProduct(v) + 0.5 * b);
  const MatC d = dt * rhs(E.cwiseProduct(v) + E2.cwiseProduct(c));
  const MatC next = E.cwiseProduct(v) + (E.cwiseProduct(a) + 2.0 * E2.cwiseProduct(b + c) + d) / 6.0;
  Mat<double> out = ifft2_real(next);
  if (!out.allFinite()) throw NumericalFault("advection-diffusion step produced non-finite values");
  return out;
}

Mat<double> AdvectionDiffusionSolver::advance(Mat<double> u, int steps) const {
  for (int s = 0; s < steps; ++s) u = step(u);
  return u;
}

const char* split_name(Split s) {
  switch (s) {
    case Split::Train:
      return "train";
    case Split::Val:
      return "val";
    case Split::Test:
      return "test";
  }
  return "?";
}

PointSet<double> TrajectoryDataset::points() const {
  PointSet<double> p = grid_points<double>(spec.n, 2);
  if (mask.size() > 0) p = PointSet<double>(p.coords, mask);
  return p;
}

SampledField<double> TrajectoryDataset::field(const Mat<double>& values) const {
  return SampledField<double>(points(), values);
}

std::vector<const Trajectory*> TrajectoryDataset::of_split(Split s) const {
  std::vector<const Trajectory*> out;
  for (const auto& t : trajectories)
    if (t.split == s) out.push_back(&t);
  return out;
}

std::vector<std::pair<SampledField<double>, SampledField<double>>> TrajectoryDataset::pairs(Split s) const {
  std::vector<std::pair<SampledField<double>, SampledField<double>>> out;
  const PointSet<double> pts = points();
  for (const auto* t : of_split(s))
    for (std::size_t k = 0; k + 1 < t->snapshots.size(); ++k)
      out.emplace_back(SampledField<double>(pts, t->snapshots[k]), SampledField<double>(pts, t->snapshots[k + 1]));
  return out;
}

namespace {

Trajectory run_trajectory(const AdvectionDiffusionSolver& solver, std::uint64_t seed, Index horizon) {
  const SynthSpec& spec = solver.spec();
  Trajectory t;
  t.seed = seed;
  Mat<double> u = grf_init(spec.n, spec.spectrum_p, seed);
  t.snapshots.push_back(flatten_grid(u));
  for (Index k = 1; k < horizon; ++k) {
    u = solver.advance(u, spec.steps_per_pair);
    t.snapshots.push_back(flatten_grid(u));
  }
  return t;
}

}  // namespace

TrajectoryDataset make_dataset(const SynthSpec& spec, Index n_traj, Index horizon, const SplitFractions& fractions) {
  if (n_traj < 1) throw ConfigError("data.n_traj: must be >= 1");
  if (horizon < 2) throw ConfigError("data.horizon: must be >= 2");
  if (fractions.train < 0 || fractions.val < 0 || fractions.test < 0 ||
      std::abs(fractions.train + fractions.val + fractions.test - 1.0) > 1e-9)
    throw ConfigError("data.split: fractions must be nonnegative and sum to 1");
  const AdvectionDiffusionSolver solver(spec);
  TrajectoryDataset ds;
  ds.spec = spec;
  const Index n_train = static_cast<Index>(std::llround(fractions.train * static_cast<double>(n_traj)));
  const Index n_val = std::min<Index>(n_traj - n_train,
                                      static_cast<Index>(std::llround(fractions.val * static_cast<double>(n_traj))));
  std::mt19937_64 rng(spec.seed);
  for (Index i = 0; i < n_traj; ++i) {
    Trajectory t = run_trajectory(solver, rng(), horizon);
    t.split = i < n_train ? Split::Train : (i < n_train + n_val ? Split::Val : Split::Test);
    ds.trajectories.push_back(std::move(t));
  }
  return ds;
}

Trajectory extend_trajectory(const SynthSpec& spec, Trajectory t, Index snapshots) {
  require_shape(!t.snapshots.empty(), "extend_trajectory: empty trajectory");
  if (static_cast<Index>(t.snapshots.size()) >= snapshots) return t;
  const AdvectionDiffusionSolver solver(spec);
  Mat<double> u = unflatten_grid(t.snapshots.back(), spec.n);
  while (static_cast<Index>(t.snapshots.size()) < snapshots) {
    u = solver.advance(u, spec.steps_per_pair);
    t.snapshots.push_back(flatten_grid(u));
  }
  return t;
}

Mask blob_mask(Index n, const MaskSpec& ms) {
  if (!(ms.fraction >= 0 && ms.fraction < 1))
    throw DomainError("mask fraction must lie in [0, 1); a full mask leaves no supervised points");
  const Index total = n * n;
  Mask m = Mask::Constant(total, false);
  const Index count = static_cast<Index>(std::llround(ms.fraction * static_cast<double>(total)));
  if (count == 0) return m;
  if (count >= total) throw DomainError("mask covers every point; no supervised points remain");
  const Mat<double> blob = flatten_grid(grf_init(n, ms.smoothness_p, ms.seed));
  std::vector<Index> order(static_cast<std::size_t>(total));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return blob(a, 0) > blob(b, 0); });
  for (Index k = 0; k < count; ++k) m(order[static_cast<std::size_t>(k)]) = true;
  return m;
}

TrajectoryDataset make_masked_variant(const TrajectoryDataset& ds, const MaskSpec& ms) {
  TrajectoryDataset out = ds;
  const Mask m = blob_mask(ds.spec.n, ms);
  if (m.count() == 0) return out;
  if (out.mask.size() > 0) out.mask = out.mask || m;
  else out.mask = m;
  return out;
}

}  // namespace gpo
