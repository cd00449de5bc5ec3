#pragma once

// Seeded generators for property tests.

#include "gpo/gpo_model.hpp"

#include <random>

namespace support {

using gpo::Index;
using M = gpo::Mat<double>;

inline M uniform(Index r, Index c, std::mt19937_64& rng, double lo = -1, double hi = 1) {
  std::uniform_real_distribution<double> u(lo, hi);
  M m(r, c);
  for (Index i = 0; i < r; ++i)
    for (Index j = 0; j < c; ++j) m(i, j) = u(rng);
  return m;
}

inline M normal(Index r, Index c, std::mt19937_64& rng, double sd = 1) {
  std::normal_distribution<double> n(0, sd);
  M m(r, c);
  for (Index i = 0; i < r; ++i)
    for (Index j = 0; j < c; ++j) m(i, j) = n(rng);
  return m;
}

inline Index pick(std::mt19937_64& rng, Index lo, Index hi) {
  return std::uniform_int_distribution<Index>(lo, hi)(rng);
}

inline gpo::PointSet<double> points(Index n, Index d, std::mt19937_64& rng) {
  return gpo::PointSet<double>(uniform(n, d, rng, 0, 1));
}

inline gpo::SampledField<double> field(Index n, Index d, Index c, std::mt19937_64& rng) {
  return {points(n, d, rng), normal(n, c, rng)};
}

// Valid particle field: positive scales, simplex weights, centers near [0,1].
inline gpo::GaussianField<double> particles(Index n, Index G, Index d, std::mt19937_64& rng) {
  gpo::GaussianField<double> gf;
  gf.G = G;
  gf.d = d;
  gf.mu = uniform(n, G * d, rng, -0.2, 1.2);
  gf.sigma = uniform(n, G * d, rng, 0.05, 0.6);
  gf.w = gpo::nn::softmax_rows<double>(normal(n, G, rng));
  return gf;
}

inline double max_abs(const M& a, const M& b) { return (a - b).cwiseAbs().maxCoeff(); }

inline gpo::ModelConfig tiny_config() {
  gpo::ModelConfig c;
  c.hidden_dim = 16;
  c.num_layers = 2;
  c.num_heads = 2;
  c.num_gaussians = 4;
  c.head_dim = 8;
  c.fourier_m = 4;
  return c;
}

}  // namespace support
