#pragma once

// Constructive Gaussian-mixture approximation of a continuous field: mollify
// with a narrow Gaussian, then replace the convolution integral by a midpoint
// Riemann sum on a uniform node grid. Coefficients may be signed.

#include "gpo/types.hpp"

namespace gpo {

// Samples of a scalar field on the n^d grid {0, 1/(n-1), ..., 1}^d, last axis fastest.
struct GridSamples {
  Vec<double> values;
  Index n = 0;
  Index d = 1;

  double coord(Index i) const { return static_cast<double>(i) / static_cast<double>(n - 1); }
  Index size() const { return values.size(); }
};

template <typename F>
GridSamples sample_on_grid(F&& f, Index n, Index d = 1) {
  require_shape(n >= 2 && d >= 1 && d <= 3, "sample_on_grid: need n >= 2 and d in 1..3");
  GridSamples s;
  s.n = n;
  s.d = d;
  Index total = 1;
  for (Index a = 0; a < d; ++a) total *= n;
  s.values.resize(total);
  Vec<double> x(d);
  for (Index j = 0; j < total; ++j) {
    Index rem = j;
    for (Index a = d - 1; a >= 0; --a) {
      x(a) = s.coord(rem % n);
      rem /= n;
    }
    s.values(j) = f(x);
  }
  return s;
}

struct MollifiedMixture {
  Mat<double> centers;  // K x d
  Vec<double> coeffs;   // K, signed
  double eps = 0;       // shared isotropic scale

  Index size() const { return coeffs.size(); }
  double operator()(const Vec<double>& x) const;
};

struct Lemma1Report {
  MollifiedMixture mixture;
  Vec<double> approx;  // mixture evaluated on the sample grid
  double sup_error = 0;
  double interior_sup_error = 0;
  double margin = 0.1;
};

// Multilinear interpolation of the samples at x in [0,1]^d.
double interpolate(const GridSamples& s, const Vec<double>& x);

// c_i = v(mu_i) * (1/grid_G)^d / ((2 pi)^(d/2) eps^d), mu_i midpoints of a grid_G^d lattice.
Lemma1Report lemma1_construct(const GridSamples& target, double eps_moll, Index grid_G, double margin = 0.1);

}  // namespace gpo
