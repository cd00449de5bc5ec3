#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>

#include "gpo/field.hpp"
#include "gpo/metrics.hpp"
#include "oracle.hpp"
#include "support.hpp"

using namespace gpo;
using support::M;

TEST_CASE("embedding at the origin is sines zero, cosines one") {
  std::mt19937_64 rng(1);
  auto emb = make_fourier_embedding<double>(5, 2, 1.0, rng);
  const M row = embed_coords(PointSet<double>(M::Zero(1, 2)), emb);
  REQUIRE(row.cols() == 10);
  CHECK(row.leftCols(5).cwiseAbs().maxCoeff() == 0.0);
  CHECK((row.rightCols(5).array() == 1.0).all());
}

TEST_CASE("single unit frequency at a quarter period") {
  FourierEmbedding<double> emb;
  emb.B = M::Ones(1, 1);
  const M row = embed_coords(PointSet<double>(M::Constant(1, 1, 0.25)), emb);
  CHECK(row(0, 0) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(std::abs(row(0, 1)) < 1e-15);
}

TEST_CASE("embedding matches scalar loop") {
  std::mt19937_64 rng(7);
  auto emb = make_fourier_embedding<double>(16, 2, 1.0, rng);
  M x(1, 2);
  x << 0.3, 0.6;
  const M got = embed_coords(PointSet<double>(x), emb);
  CHECK(support::max_abs(got, oracle::embed(x, emb.B)) < 1e-12);
  CHECK(got.cols() == 2 * emb.frequencies());
}

TEST_CASE("embedding is pure and rejects dimension mismatch") {
  std::mt19937_64 rng(2);
  auto emb = make_fourier_embedding<double>(8, 2, 1.0, rng);
  const auto pts = support::points(50, 2, rng);
  const M a = embed_coords(pts, emb), b = embed_coords(pts, emb);
  CHECK(std::memcmp(a.data(), b.data(), sizeof(double) * a.size()) == 0);
  CHECK_THROWS_AS(embed_coords(support::points(4, 3, rng), emb), ShapeError);
}

TEST_CASE("constant channel normalizes to zero with floored std") {
  std::mt19937_64 rng(4);
  M v = M::Constant(20, 2, 3.5);
  v.col(1) = support::normal(20, 1, rng);
  const auto s = compute_norm_stats<double>({&v});
  CHECK(s.floored[0]);
  CHECK_FALSE(s.floored[1]);
  CHECK(s.std(0) == NormStats<double>::kStdFloor);
  CHECK(normalize_values(v, s).col(0).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("unit statistics are the identity") {
  std::mt19937_64 rng(5);
  const M v = support::normal(30, 3, rng);
  NormStats<double> s;
  s.mean = Vec<double>::Zero(3);
  s.std = Vec<double>::Ones(3);
  s.floored.assign(3, false);
  CHECK(normalize_values(v, s) == v);
  CHECK(denormalize_values(v, s) == v);
}

TEST_CASE("normalization round trip") {
  std::mt19937_64 rng(3);
  M v = support::normal(200, 3, rng, 4.0);
  v.col(2).array() += 100.0;
  const auto s = compute_norm_stats<double>({&v});
  const M back = denormalize_values(normalize_values(v, s), s);
  CHECK(support::max_abs(back, v) < 1e-12);
  const M z = normalize_values(v, s);
  for (Index c = 0; c < 3; ++c) {
    CHECK(std::abs(z.col(c).mean()) < 1e-12);
    CHECK(std::abs(z.col(c).squaredNorm() / 200.0 - 1.0) < 1e-12);
  }
  CHECK_THROWS_AS(normalize_values(M(M::Zero(3, 2)), s), ShapeError);
}

TEST_CASE("masked rows never reach the metric") {
  std::mt19937_64 rng(8);
  const M truth = support::normal(40, 2, rng);
  M pred = truth + 0.1 * support::normal(40, 2, rng);
  Mask mask = Mask::Constant(40, false);
  for (Index j = 0; j < 40; j += 3) mask(j) = true;
  const double base = relative_l2(pred, truth, mask);
  for (Index j = 0; j < 40; j += 3) pred.row(j).setConstant(1e6);
  CHECK(relative_l2(pred, truth, mask) == base);
}

TEST_CASE("compact keeps exactly the unmasked rows") {
  std::mt19937_64 rng(9);
  Mask mask = Mask::Constant(10, false);
  mask(2) = mask(7) = true;
  SampledField<double> f(PointSet<double>(support::uniform(10, 2, rng, 0, 1), mask), support::normal(10, 1, rng));
  const auto c = compact(f);
  REQUIRE(c.size() == 8);
  CHECK(c.values(2, 0) == f.values(3, 0));
  CHECK(c.points.coords.row(6) == f.points.coords.row(8));
  CHECK_FALSE(c.points.has_mask());
  Mask all = Mask::Constant(10, true);
  CHECK_THROWS_AS(compact(SampledField<double>(PointSet<double>(f.points.coords, all), f.values)), DomainError);
}

TEST_CASE("point sets validate their invariants") {
  CHECK_THROWS_AS(PointSet<double>(M(0, 2)), ShapeError);
  CHECK_THROWS_AS(PointSet<double>(M::Zero(3, 4)), ShapeError);
  M bad = M::Zero(2, 2);
  bad(1, 1) = std::nan("");
  CHECK_THROWS_AS(PointSet<double>{bad}, DomainError);
  CHECK_THROWS_AS(SampledField<double>(PointSet<double>(M::Zero(3, 1)), M::Zero(2, 1)), ShapeError);
}

TEST_CASE("grid points are row major on [0,1)") {
  const auto g = grid_points<double>(4, 2);
  REQUIRE(g.size() == 16);
  CHECK(g.coords(1, 1) == 0.25);
  CHECK(g.coords(1, 0) == 0.0);
  CHECK(g.coords(4, 0) == 0.25);
  CHECK(g.coords.maxCoeff() == 0.75);
}
