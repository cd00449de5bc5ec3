#pragma once

// Periodic 2D advection-diffusion data: Gaussian random field initial
// conditions, an integrating-factor RK4 pseudo-spectral solver, trajectory
// datasets with train/val/test splits, and blob masks.

#include "gpo/field.hpp"
#include "gpo/spectral.hpp"

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace gpo {

enum class VelocityKind { Zero, Uniform, Shear };

// Shear: v = (ux + amp sin 2 pi y, uy + amp sin 2 pi x), divergence free.
struct VelocitySpec {
  VelocityKind kind = VelocityKind::Shear;
  double ux = 0.5;
  double uy = 0.25;
  double amp = 0.5;

  double max_speed() const;
};

struct SynthSpec {
  Index n = 32;
  double nu = 1e-3;
  VelocitySpec velocity;
  double dt = 0.0125;
  int steps_per_pair = 1;
  double spectrum_p = 4.0;
  std::uint64_t seed = 0;

  double dx() const { return 1.0 / static_cast<double>(n); }
  double stable_dt() const;  // 0.5 * min(dx / |v|max, dx^2 / (4 nu))
  void validate() const;     // throws ConfigError
};

// Zero-mean, unit-variance periodic field with power spectrum ~ |k|^-p.
Mat<double> grf_init(Index n, double p, std::uint64_t seed);

class AdvectionDiffusionSolver {
 public:
  explicit AdvectionDiffusionSolver(const SynthSpec& spec);

  Mat<double> step(const Mat<double>& u) const;  // n x n
  Mat<double> advance(Mat<double> u, int steps) const;
  const SynthSpec& spec() const { return spec_; }
  const Mat<double>& vx() const { return vx_; }
  const Mat<double>& vy() const { return vy_; }

 private:
  MatC rhs(const MatC& uh) const;  // -v . grad u in spectral space

  SynthSpec spec_;
  Mat<double> vx_, vy_;
  MatC ikx_, iky_;
  Mat<double> E_, E2_;
};

enum class Split { Train, Val, Test };
const char* split_name(Split s);

struct Trajectory {
  std::vector<Mat<double>> snapshots;  // each n^2 x 1, last axis fastest
  Split split = Split::Train;
  std::uint64_t seed = 0;
};

struct SplitFractions {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

struct TrajectoryDataset {
  SynthSpec spec;
  std::vector<Trajectory> trajectories;
  Mask mask;  // empty or n^2; true = excluded from supervision

  PointSet<double> points() const;
  SampledField<double> field(const Mat<double>& values) const;
  std::vector<std::pair<SampledField<double>, SampledField<double>>> pairs(Split s) const;
  std::vector<const Trajectory*> of_split(Split s) const;
  std::size_t count(Split s) const { return of_split(s).size(); }
};

// horizon = snapshots per trajectory (horizon - 1 one-step pairs each).
TrajectoryDataset make_dataset(const SynthSpec& spec, Index n_traj, Index horizon,
                               const SplitFractions& fractions = {});

// Continues a trajectory with the solver until it holds at least `snapshots` entries.
Trajectory extend_trajectory(const SynthSpec& spec, Trajectory t, Index snapshots);

struct MaskSpec {
  double fraction = 0.3;
  std::uint64_t seed = 1;
  double smoothness_p = 6.0;
};

// Blob mask: the `fraction` of points with the largest values of a smooth
// random field. fraction 0 returns the dataset unchanged.
Mask blob_mask(Index n, const MaskSpec& ms);
TrajectoryDataset make_masked_variant(const TrajectoryDataset& ds, const MaskSpec& ms);

}  // namespace gpo
