#pragma once

// Coordinate sets, sampled fields, per-channel normalization and the frozen
// Fourier positional embedding.

#include "gpo/types.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <vector>

namespace gpo {

template <typename Scalar>
struct PointSet {
  Mat<Scalar> coords;  // N x d
  Mask mask;           // empty, or length N; true = excluded

  PointSet() = default;
  explicit PointSet(Mat<Scalar> c) : coords(std::move(c)) { validate(); }
  PointSet(Mat<Scalar> c, Mask m) : coords(std::move(c)), mask(std::move(m)) { validate(); }

  Index size() const { return coords.rows(); }
  Index dim() const { return coords.cols(); }
  bool has_mask() const { return mask.size() > 0; }
  bool masked(Index j) const { return has_mask() && mask(j); }

  Index count_unmasked() const {
    if (!has_mask()) return size();
    return size() - static_cast<Index>(mask.count());
  }

  void validate() const {
    require_shape(coords.rows() >= 1, "PointSet: needs at least one point");
    require_shape(coords.cols() >= 1 && coords.cols() <= 3, "PointSet: dimension must be 1, 2 or 3");
    require_shape(mask.size() == 0 || mask.size() == coords.rows(), "PointSet: mask length mismatch");
    if (!coords.allFinite()) throw DomainError("PointSet: non-finite coordinate");
  }
};

template <typename Scalar>
struct SampledField {
  PointSet<Scalar> points;
  Mat<Scalar> values;  // N x c

  SampledField() = default;
  SampledField(PointSet<Scalar> p, Mat<Scalar> v) : points(std::move(p)), values(std::move(v)) {
    require_shape(values.rows() == points.size(), "SampledField: value rows must equal point count");
    if (!values.allFinite()) throw DomainError("SampledField: non-finite value");
  }

  Index size() const { return points.size(); }
  Index channels() const { return values.cols(); }
};

// Drops masked rows. The result carries no mask.
template <typename Scalar>
SampledField<Scalar> compact(const SampledField<Scalar>& f) {
  if (!f.points.has_mask()) return f;
  const Index keep = f.points.count_unmasked();
  if (keep == 0) throw DomainError("compact: every point is masked");
  Mat<Scalar> c(keep, f.points.dim());
  Mat<Scalar> v(keep, f.channels());
  Index r = 0;
  for (Index j = 0; j < f.size(); ++j) {
    if (f.points.masked(j)) continue;
    c.row(r) = f.points.coords.row(j);
    v.row(r) = f.values.row(j);
    ++r;
  }
  return SampledField<Scalar>(PointSet<Scalar>(std::move(c)), std::move(v));
}

template <typename Scalar>
struct NormStats {
  Vec<Scalar> mean;
  Vec<Scalar> std;
  std::vector<bool> floored;  // channel had (near) zero variance

  static constexpr double kStdFloor = 1e-8;

  Index channels() const { return mean.size(); }
  bool any_floored() const {
    for (bool f : floored)
      if (f) return true;
    return false;
  }
};

// Per-channel mean / population std over the unmasked rows of every field.
template <typename Scalar>
NormStats<Scalar> compute_norm_stats(const std::vector<const Mat<Scalar>*>& blocks) {
  require_shape(!blocks.empty(), "compute_norm_stats: no data");
  const Index c = blocks.front()->cols();
  Vec<long double> sum = Vec<long double>::Zero(c), sq = Vec<long double>::Zero(c);
  long double count = 0;
  for (const auto* b : blocks) {
    require_shape(b->cols() == c, "compute_norm_stats: channel mismatch");
    for (Index j = 0; j < b->rows(); ++j)
      for (Index k = 0; k < c; ++k) {
        const long double x = (*b)(j, k);
        sum(k) += x;
        sq(k) += x * x;
      }
    count += b->rows();
  }
  NormStats<Scalar> s;
  s.mean.resize(c);
  s.std.resize(c);
  s.floored.assign(c, false);
  for (Index k = 0; k < c; ++k) {
    const long double m = sum(k) / count;
    const long double var = std::max<long double>(sq(k) / count - m * m, 0.0L);
    long double sd = std::sqrt(var);
    if (sd < NormStats<Scalar>::kStdFloor) {
      sd = NormStats<Scalar>::kStdFloor;
      s.floored[k] = true;
    }
    s.mean(k) = static_cast<Scalar>(m);
    s.std(k) = static_cast<Scalar>(sd);
  }
  return s;
}

template <typename Scalar>
Mat<Scalar> normalize_values(const Mat<Scalar>& v, const NormStats<Scalar>& s) {
  require_shape(v.cols() == s.channels(), "normalize: channel count mismatch");
  return ((v.rowwise() - s.mean.transpose()).array().rowwise() / s.std.transpose().array()).matrix();
}

template <typename Scalar>
Mat<Scalar> denormalize_values(const Mat<Scalar>& v, const NormStats<Scalar>& s) {
  require_shape(v.cols() == s.channels(), "denormalize: channel count mismatch");
  return ((v.array().rowwise() * s.std.transpose().array()).matrix().rowwise() + s.mean.transpose());
}

template <typename Scalar>
SampledField<Scalar> normalize(const SampledField<Scalar>& f, const NormStats<Scalar>& s) {
  return SampledField<Scalar>(f.points, normalize_values(f.values, s));
}

template <typename Scalar>
SampledField<Scalar> denormalize(const SampledField<Scalar>& f, const NormStats<Scalar>& s) {
  return SampledField<Scalar>(f.points, denormalize_values(f.values, s));
}

template <typename Scalar>
struct FourierEmbedding {
  Mat<Scalar> B;  // m x d, frozen
  Scalar sigma_B = 1;

  Index frequencies() const { return B.rows(); }
  Index dim() const { return B.cols(); }
  Index output_dim() const { return 2 * B.rows(); }
};

template <typename Scalar>
FourierEmbedding<Scalar> make_fourier_embedding(Index m, Index d, double sigma_B, std::mt19937_64& rng) {
  if (!(sigma_B > 0)) throw DomainError("FourierEmbedding: sigma_B must be positive");
  std::normal_distribution<double> normal(0.0, sigma_B);
  FourierEmbedding<Scalar> e;
  e.sigma_B = static_cast<Scalar>(sigma_B);
  e.B.resize(m, d);
  for (Index r = 0; r < m; ++r)
    for (Index c = 0; c < d; ++c) e.B(r, c) = static_cast<Scalar>(normal(rng));
  return e;
}

// Row j is [sin(2 pi B x_j), cos(2 pi B x_j)].
template <typename Scalar>
Mat<Scalar> embed_coords(const PointSet<Scalar>& pts, const FourierEmbedding<Scalar>& emb) {
  require_shape(pts.dim() == emb.dim(), "embed_coords: B has " + std::to_string(emb.dim()) +
                                            " columns but coordinates have dimension " + std::to_string(pts.dim()));
  const Index m = emb.frequencies();
  const Mat<Scalar> phase = Scalar(2 * std::numbers::pi) * (pts.coords * emb.B.transpose());
  Mat<Scalar> out(pts.size(), 2 * m);
  out.leftCols(m) = phase.array().sin().matrix();
  out.rightCols(m) = phase.array().cos().matrix();
  return out;
}

// Regular n^d grid on [0,1)^d, last axis fastest.
template <typename Scalar>
PointSet<Scalar> grid_points(Index n, Index d = 2) {
  Index total = 1;
  for (Index a = 0; a < d; ++a) total *= n;
  Mat<Scalar> c(total, d);
  for (Index j = 0; j < total; ++j) {
    Index rem = j;
    for (Index a = d - 1; a >= 0; --a) {
      c(j, a) = static_cast<Scalar>(rem % n) / static_cast<Scalar>(n);
      rem /= n;
    }
  }
  return PointSet<Scalar>(std::move(c));
}

template <typename Scalar, typename Other>
SampledField<Other> cast_field(const SampledField<Scalar>& f) {
  PointSet<Other> p(f.points.coords.template cast<Other>(), f.points.mask);
  return SampledField<Other>(std::move(p), f.values.template cast<Other>());
}

}  // namespace gpo
