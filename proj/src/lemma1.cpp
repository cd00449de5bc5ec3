#include "gpo/lemma1.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace gpo {

double MollifiedMixture::operator()(const Vec<double>& x) const {
  const double inv = 1.0 / (eps * eps);
  double acc = 0;
  for (Index i = 0; i < size(); ++i) {
    const double r2 = (centers.row(i).transpose() - x).squaredNorm();
    acc += coeffs(i) * std::exp(-0.5 * r2 * inv);
  }
  return acc;
}

double interpolate(const GridSamples& s, const Vec<double>& x) {
  require_shape(x.size() == s.d, "interpolate: dimension mismatch");
  const Index n = s.n;
  Index lo[3] = {0, 0, 0};
  double t[3] = {0, 0, 0};
  for (Index a = 0; a < s.d; ++a) {
    const double u = std::clamp(x(a), 0.0, 1.0) * static_cast<double>(n - 1);
    lo[a] = std::min<Index>(static_cast<Index>(std::floor(u)), n - 2);
    t[a] = u - static_cast<double>(lo[a]);
  }
  double acc = 0;
  const Index corners = Index{1} << s.d;
  for (Index c = 0; c < corners; ++c) {
    double wt = 1;
    Index flat = 0;
    for (Index a = 0; a < s.d; ++a) {
      const bool up = (c >> a) & 1;
      wt *= up ? t[a] : 1 - t[a];
      flat = flat * n + lo[a] + (up ? 1 : 0);
    }
    if (wt != 0) acc += wt * s.values(flat);
  }
  return acc;
}

Lemma1Report lemma1_construct(const GridSamples& target, double eps_moll, Index grid_G, double margin) {
  if (!(eps_moll > 0)) throw DomainError("lemma1_construct: eps_moll must be positive");
  require_shape(grid_G >= 1, "lemma1_construct: grid_G must be >= 1");
  require_shape(target.n >= 2 && target.size() > 0, "lemma1_construct: empty target");
  const Index d = target.d;
  Index K = 1;
  for (Index a = 0; a < d; ++a) K *= grid_G;

  Lemma1Report rep;
  rep.margin = margin;
  MollifiedMixture& mix = rep.mixture;
  mix.eps = eps_moll;
  mix.centers.resize(K, d);
  mix.coeffs.resize(K);
  const double cell = std::pow(1.0 / static_cast<double>(grid_G), static_cast<double>(d));
  const double norm = std::pow(2 * std::numbers::pi, 0.5 * static_cast<double>(d)) * std::pow(eps_moll, static_cast<double>(d));
  Vec<double> mu(d);
  for (Index i = 0; i < K; ++i) {
    Index rem = i;
    for (Index a = d - 1; a >= 0; --a) {
      mu(a) = (static_cast<double>(rem % grid_G) + 0.5) / static_cast<double>(grid_G);
      rem /= grid_G;
    }
    mix.centers.row(i) = mu.transpose();
    mix.coeffs(i) = interpolate(target, mu) * cell / norm;
  }

  rep.approx.resize(target.size());
  Vec<double> x(d);
  for (Index j = 0; j < target.size(); ++j) {
    Index rem = j;
    bool interior = true;
    for (Index a = d - 1; a >= 0; --a) {
      x(a) = target.coord(rem % target.n);
      rem /= target.n;
      if (x(a) < margin || x(a) > 1 - margin) interior = false;
    }
    rep.approx(j) = mix(x);
    const double err = std::abs(rep.approx(j) - target.values(j));
    rep.sup_error = std::max(rep.sup_error, err);
    if (interior) rep.interior_sup_error = std::max(rep.interior_sup_error, err);
  }
  return rep;
}

}  // namespace gpo
