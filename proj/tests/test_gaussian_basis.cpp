#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "gpo/gaussian_basis.hpp"
#include "gpo/lemma1.hpp"
#include "oracle.hpp"
#include "support.hpp"

#include <numbers>

using namespace gpo;
using support::M;

namespace {

RowVec<double> rv(std::initializer_list<double> v) {
  RowVec<double> r(static_cast<Index>(v.size()));
  Index i = 0;
  for (double x : v) r(i++) = x;
  return r;
}

}  // namespace

TEST_CASE("zero encoder gives centred unit-free particles") {
  std::mt19937_64 rng(1);
  const auto f = support::field(6, 2, 1, rng);
  auto emb = make_fourier_embedding<double>(4, 2, 1.0, rng);
  const auto p = EncoderParams<double>::zeros(1, emb.output_dim(), 8, 3, 2);
  const auto gf = encode(f, emb, p);
  CHECK(gf.mu.cwiseAbs().maxCoeff() == 0.0);
  CHECK(gf.sigma.minCoeff() == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(gf.sigma.maxCoeff() == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK((gf.w.array() - 1.0 / 3.0).abs().maxCoeff() < 1e-15);
}

TEST_CASE("encoder weight rows are on the simplex") {
  std::mt19937_64 rng(11);
  for (int rep = 0; rep < 20; ++rep) {
    const Index G = support::pick(rng, 1, 9), d = support::pick(rng, 1, 3);
    const auto f = support::field(support::pick(rng, 1, 30), d, 2, rng);
    auto emb = make_fourier_embedding<double>(6, d, 1.0, rng);
    const auto p = EncoderParams<double>::random(2, emb.output_dim(), 12, G, d, rng);
    const auto gf = encode(f, emb, p);
    CHECK(gf.valid(1e-6));
    CHECK(((gf.w.rowwise().sum().array() - 1.0).abs() < 1e-12).all());
  }
}

TEST_CASE("encoder matches scalar loop on a toy") {
  std::mt19937_64 rng(4);
  const auto f = support::field(4, 1, 1, rng);
  auto emb = make_fourier_embedding<double>(3, 1, 1.0, rng);
  auto p = EncoderParams<double>::random(1, emb.output_dim(), 5, 2, 1, rng);
  p.c_w = support::normal(5, 1, rng);
  p.b_w = support::normal(2, 1, rng);
  const auto gf = encode(f, emb, p);
  const auto ref = oracle::encode(f.values, f.points.coords, emb.B, p);
  CHECK(support::max_abs(gf.mu, ref.mu) < 1e-12);
  CHECK(support::max_abs(gf.sigma, ref.sigma) < 1e-12);
  CHECK(support::max_abs(gf.w, ref.w) < 1e-12);
}

TEST_CASE("sigma floor holds under extreme pre-activations") {
  std::mt19937_64 rng(5);
  const auto f = support::field(5, 2, 1, rng);
  auto emb = make_fourier_embedding<double>(2, 2, 1.0, rng);
  auto p = EncoderParams<double>::zeros(1, emb.output_dim(), 4, 2, 2);
  p.b_sigma.setConstant(-1e3);
  const auto gf = encode(f, emb, p);
  CHECK(gf.sigma.minCoeff() == kSigmaFloor);
}

TEST_CASE("encoder reports the failing layer on non-finite activations") {
  std::mt19937_64 rng(6);
  const auto f = support::field(3, 2, 1, rng);
  auto emb = make_fourier_embedding<double>(2, 2, 1.0, rng);
  auto p = EncoderParams<double>::random(1, emb.output_dim(), 4, 2, 2, rng);
  p.W_in(0, 0) = std::numeric_limits<double>::infinity();
  p.W_in(0, 1) = -std::numeric_limits<double>::infinity();
  CHECK_THROWS_WITH_AS(encode(f, emb, p), doctest::Contains("encoder"), NumericalFault);
}

TEST_CASE("kernel values") {
  CHECK(gaussian_kernel<double>(rv({0.3, 0.4}), rv({0.3, 0.4}), rv({0.1, 0.2})) == 1.0);
  CHECK(gaussian_kernel<double>(rv({0.5, 0.0}), rv({0.2, 0.0}), rv({0.3, 1.0})) ==
        doctest::Approx(std::exp(-0.5)).epsilon(1e-14));
  CHECK(gaussian_kernel<double>(rv({0.1 + 0.2, 0.0 + 2 * 0.05}), rv({0.1, 0.0}), rv({0.2, 0.05})) ==
        doctest::Approx(0.0820849986238988).epsilon(1e-13));
  CHECK(gaussian_kernel<double>(rv({0.31, 0.4}), rv({0.3, 0.4}), rv({0.1, 0.2})) < 1.0);
  CHECK_THROWS_AS(gaussian_kernel<double>(rv({0.0}), rv({0.0}), rv({0.0})), DomainError);
  CHECK_THROWS_AS(gaussian_kernel<double>(rv({0.0}), rv({0.0}), rv({-1.0})), DomainError);
}

TEST_CASE("centred particles return their weights") {
  std::mt19937_64 rng(2);
  auto gf = support::particles(7, 3, 2, rng);
  const auto pts = support::points(7, 2, rng);
  for (Index i = 0; i < 3; ++i) gf.mu.middleCols(i * 2, 2) = pts.coords;
  const M z = evaluate_basis(gf, pts);
  CHECK(support::max_abs(z, gf.w) == 0.0);
  CHECK(((z.rowwise().sum().array() - 1.0).abs() < 1e-12).all());
}

TEST_CASE("one-hot weight at one scale of distance") {
  GaussianField<double> gf = GaussianField<double>::zeros(1, 3, 2);
  gf.sigma.setConstant(0.2);
  gf.w(0, 1) = 1.0;
  M q(1, 2);
  q << 0.2, 0.0;
  const M z = evaluate_basis(gf, PointSet<double>(q));
  CHECK(z(0, 1) == doctest::Approx(std::exp(-0.5)).epsilon(1e-14));
  CHECK(z(0, 0) == 0.0);
  CHECK(z(0, 2) == 0.0);
}

TEST_CASE("basis matches scalar loop") {
  std::mt19937_64 rng(5);
  const auto gf = support::particles(8, 4, 2, rng);
  const auto pts = support::points(8, 2, rng);
  CHECK(support::max_abs(evaluate_basis(gf, pts), oracle::basis(oracle::from_field(gf), pts.coords)) < 1e-12);
  CHECK_THROWS_AS(evaluate_basis(gf, support::points(7, 2, rng)), ShapeError);
}

TEST_CASE("basis is bounded by the weights") {
  std::mt19937_64 rng(21);
  for (int rep = 0; rep < 50; ++rep) {
    const Index n = support::pick(rng, 1, 20), G = support::pick(rng, 1, 8), d = support::pick(rng, 1, 3);
    const auto gf = support::particles(n, G, d, rng);
    const M z = evaluate_basis(gf, PointSet<double>(support::uniform(n, d, rng, -2, 3)));
    CHECK((z.array() >= 0).all());
    CHECK((z.array() <= gf.w.array()).all());
  }
}

TEST_CASE("decoder") {
  std::mt19937_64 rng(3);
  const M Z = support::uniform(6, 4, rng, 0, 1);
  auto p = DecoderParams<double>::zeros(4, 5, 2);
  CHECK(decode(Z, p).cwiseAbs().maxCoeff() == 0.0);
  p.b2 << 0.25, -1.5;
  CHECK((decode(Z, p).rowwise() - p.b2.transpose()).cwiseAbs().maxCoeff() == 0.0);

  // identity first layer on nonnegative input, linear second layer
  auto q = DecoderParams<double>::zeros(4, 4, 2);
  q.W1.setIdentity();
  q.W2 = support::normal(2, 4, rng);
  CHECK(support::max_abs(decode(Z, q), Z * q.W2.transpose()) < 1e-15);

  auto r = DecoderParams<double>::random(4, 7, 3, rng);
  r.b1 = support::normal(7, 1, rng);
  r.b2 = support::normal(3, 1, rng);
  CHECK(support::max_abs(decode(Z, r), oracle::decode(Z, r)) < 1e-12);
}

TEST_CASE("barycenter regularizer") {
  std::mt19937_64 rng(7);
  auto gf = support::particles(5, 3, 2, rng);
  const auto pts = support::points(5, 2, rng);
  for (Index i = 0; i < 3; ++i) gf.mu.middleCols(i * 2, 2) = pts.coords;
  CHECK(reg_mu(gf, pts) < 1e-30);

  auto one = GaussianField<double>::zeros(1, 1, 2);
  one.w(0, 0) = 1.0;
  one.sigma.setOnes();
  one.mu << 0.5, 0.9;
  M x(1, 2);
  x << 0.2, 0.5;
  CHECK(reg_mu(one, PointSet<double>(x)) == doctest::Approx(0.25).epsilon(1e-14));

  const auto r = support::particles(9, 4, 3, rng);
  const auto q = support::points(9, 3, rng);
  CHECK(reg_mu(r, q) == doctest::Approx(oracle::reg_mu(oracle::from_field(r), q.coords)).epsilon(1e-13));
}

TEST_CASE("barycenter regularizer vanishes only on its zero set") {
  std::mt19937_64 rng(17);
  for (int rep = 0; rep < 30; ++rep) {
    auto gf = support::particles(4, 3, 2, rng);
    const auto pts = support::points(4, 2, rng);
    CHECK(reg_mu(gf, pts) >= 0);
    // shift components so each barycenter lands on its site
    Mat<double> bary = Mat<double>::Zero(4, 2);
    for (Index i = 0; i < 3; ++i)
      bary += (gf.mu.middleCols(i * 2, 2).array().colwise() * gf.w.col(i).array()).matrix();
    for (Index i = 0; i < 3; ++i) gf.mu.middleCols(i * 2, 2) += pts.coords - bary;
    CHECK(reg_mu(gf, pts) < 1e-28);
    gf.mu(2, 1) += 0.01;
    CHECK(reg_mu(gf, pts) > 0);
  }
}

TEST_CASE("scale band regularizer") {
  auto gf = GaussianField<double>::zeros(5, 1, 2);
  gf.sigma.setConstant(0.1);
  CHECK(reg_sigma(gf, 1e-3, 0.5) == 0.0);
  gf.sigma(3, 1) = 0.7;
  CHECK(reg_sigma(gf, 1e-3, 0.5) == doctest::Approx(0.02).epsilon(1e-13));
  gf.sigma(0, 0) = 5e-4;
  CHECK(reg_sigma(gf, 1e-3, 0.5) > 0.02);
  CHECK_THROWS_AS(reg_sigma(gf, 0.5, 0.1), DomainError);

  std::mt19937_64 rng(8);
  for (int rep = 0; rep < 20; ++rep) {
    const auto r = support::particles(6, 3, 2, rng);
    const double got = reg_sigma(r, 0.1, 0.4);
    CHECK(got >= 0);
    CHECK(got == doctest::Approx(oracle::reg_sigma(r.sigma, 0.1, 0.4)).epsilon(1e-13));
    const bool inside = (r.sigma.array() >= 0.1).all() && (r.sigma.array() <= 0.4).all();
    CHECK((got == 0.0) == inside);
  }
}

TEST_CASE("mollified mixture of a constant") {
  const auto target = sample_on_grid([](const Vec<double>&) { return 1.0; }, 2001);
  const auto rep = lemma1_construct(target, 0.02, 64);
  CHECK(rep.mixture.size() == 64);
  CHECK(rep.interior_sup_error < 1e-3);
  CHECK(rep.sup_error >= rep.interior_sup_error);
}

TEST_CASE("mollified mixture of a sine converges with the node grid") {
  const auto target = sample_on_grid([](const Vec<double>& x) { return std::sin(2 * std::numbers::pi * x(0)); }, 2001);
  double prev = std::numeric_limits<double>::infinity();
  for (Index G : {16, 32, 64, 128}) {
    const auto rep = lemma1_construct(target, 0.02, G);
    CHECK(rep.interior_sup_error <= 1.1 * prev);
    prev = rep.interior_sup_error;
  }
  CHECK(prev < 0.01);
}

TEST_CASE("mixture evaluation matches direct summation") {
  const auto target = sample_on_grid([](const Vec<double>& x) { return x(0) * x(1) - 0.3; }, 41, 2);
  const auto rep = lemma1_construct(target, 0.05, 40);
  REQUIRE(rep.mixture.size() == 1600);
  Vec<double> x(2);
  x << 0.37, 0.61;
  double direct = 0;
  for (Index i = 0; i < 1600; ++i) {
    const double r2 = (rep.mixture.centers.row(i).transpose() - x).squaredNorm();
    direct += rep.mixture.coeffs(i) * std::exp(-0.5 * r2 / (0.05 * 0.05));
  }
  CHECK(rep.mixture(x) == doctest::Approx(direct).epsilon(1e-13));
  CHECK(rep.interior_sup_error < 0.05);
}

TEST_CASE("multilinear interpolation is exact on bilinear functions") {
  const auto s = sample_on_grid([](const Vec<double>& x) { return 2 * x(0) - x(1) + 3 * x(0) * x(1); }, 5, 2);
  Vec<double> x(2);
  x << 0.33, 0.71;
  CHECK(interpolate(s, x) == doctest::Approx(2 * 0.33 - 0.71 + 3 * 0.33 * 0.71).epsilon(1e-13));
}
