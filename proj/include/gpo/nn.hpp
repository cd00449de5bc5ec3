#pragma once

// Small dense building blocks shared by the encoder, attention and decoder.
// Activations are stored one site per row; weights are stored out x in and
// applied as X * W^T.

#include "gpo/types.hpp"

#include <cmath>
#include <random>

namespace gpo::nn {

template <typename Scalar>
Mat<Scalar> affine(const Mat<Scalar>& x, const Mat<Scalar>& w, const Vec<Scalar>& b) {
  Mat<Scalar> y = x * w.transpose();
  if (b.size() > 0) y.rowwise() += b.transpose();
  return y;
}

template <typename Derived>
auto relu(const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  return x.cwiseMax(Scalar(0));
}

// Zeroes the upstream gradient where the pre-activation was not positive.
template <typename Scalar>
Mat<Scalar> relu_backward(const Mat<Scalar>& upstream, const Mat<Scalar>& pre) {
  return (pre.array() > Scalar(0)).select(upstream, Scalar(0));
}

template <typename Scalar>
Scalar softplus(Scalar x) {
  if (x > Scalar(30)) return x;
  return std::log1p(std::exp(x));
}

template <typename Scalar>
Scalar sigmoid(Scalar x) {
  if (x >= Scalar(0)) return Scalar(1) / (Scalar(1) + std::exp(-x));
  const Scalar e = std::exp(x);
  return e / (Scalar(1) + e);
}

template <typename Scalar>
Mat<Scalar> softmax_rows(const Mat<Scalar>& logits) {
  Mat<Scalar> e = (logits.colwise() - logits.rowwise().maxCoeff()).array().exp().matrix();
  return (e.array().colwise() / e.rowwise().sum().array()).matrix();
}

template <typename Scalar>
Mat<Scalar> softmax_rows_backward(const Mat<Scalar>& upstream, const Mat<Scalar>& probs) {
  const Vec<Scalar> inner = upstream.cwiseProduct(probs).rowwise().sum();
  return (probs.array() * (upstream.array().colwise() - inner.array())).matrix();
}

// Shannon entropy of each row of a row-stochastic matrix.
template <typename Scalar>
Vec<Scalar> row_entropy(const Mat<Scalar>& probs) {
  Vec<Scalar> h(probs.rows());
  for (Index r = 0; r < probs.rows(); ++r) {
    Scalar acc = 0;
    for (Index c = 0; c < probs.cols(); ++c) {
      const Scalar p = probs(r, c);
      if (p > Scalar(0)) acc -= p * std::log(p);
    }
    h(r) = acc;
  }
  return h;
}

// Gaussian init scaled by 1/sqrt(fan_in).
template <typename Scalar>
Mat<Scalar> init_weight(Index out, Index in, std::mt19937_64& rng, double gain = 1.0) {
  std::normal_distribution<double> normal(0.0, gain / std::sqrt(static_cast<double>(std::max<Index>(in, 1))));
  Mat<Scalar> w(out, in);
  for (Index c = 0; c < in; ++c)
    for (Index r = 0; r < out; ++r) w(r, c) = static_cast<Scalar>(normal(rng));
  return w;
}

}  // namespace gpo::nn
