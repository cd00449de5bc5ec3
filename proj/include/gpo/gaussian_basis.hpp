#pragma once

// Per-site Gaussian particles: the encoder that predicts them, weighted
// kernel evaluation, the decoder head and the particle regularizers.
// Every differentiable stage has a matching *_backward that accumulates
// parameter gradients and returns input gradients.

#include "gpo/field.hpp"
#include "gpo/nn.hpp"

#include <cmath>
#include <random>
#include <string>

namespace gpo {

// mu and sigma are N x (G*d) with component i occupying columns [i*d, i*d+d).
template <typename Scalar>
struct GaussianField {
  Mat<Scalar> mu;
  Mat<Scalar> sigma;
  Mat<Scalar> w;  // N x G
  Index G = 0;
  Index d = 0;

  Index size() const { return w.rows(); }

  static GaussianField zeros(Index n, Index g, Index d) {
    GaussianField f;
    f.G = g;
    f.d = d;
    f.mu = Mat<Scalar>::Zero(n, g * d);
    f.sigma = Mat<Scalar>::Zero(n, g * d);
    f.w = Mat<Scalar>::Zero(n, g);
    return f;
  }

  // Checks sigma > 0, w on the simplex (to tol) and finiteness.
  bool valid(double tol = 1e-6) const {
    if (!mu.allFinite() || !sigma.allFinite() || !w.allFinite()) return false;
    if ((sigma.array() <= Scalar(0)).any()) return false;
    if ((w.array() < Scalar(0)).any()) return false;
    const Vec<Scalar> rs = w.rowwise().sum();
    return ((rs.array() - Scalar(1)).abs() <= Scalar(tol)).all();
  }
};

// Rows of `f` selected by `index` (used to hand context particles to queries).
template <typename Scalar>
GaussianField<Scalar> gather_sites(const GaussianField<Scalar>& f, const std::vector<Index>& index) {
  GaussianField<Scalar> out;
  out.G = f.G;
  out.d = f.d;
  const Index m = static_cast<Index>(index.size());
  out.mu.resize(m, f.mu.cols());
  out.sigma.resize(m, f.sigma.cols());
  out.w.resize(m, f.w.cols());
  for (Index r = 0; r < m; ++r) {
    const Index j = index[static_cast<std::size_t>(r)];
    out.mu.row(r) = f.mu.row(j);
    out.sigma.row(r) = f.sigma.row(j);
    out.w.row(r) = f.w.row(j);
  }
  return out;
}

template <typename Scalar>
struct EncoderParams {
  Mat<Scalar> W_in;
  Vec<Scalar> b_in;
  Mat<Scalar> U_mu, U_sigma, U_w;
  Vec<Scalar> c_mu, c_sigma, c_w;
  Mat<Scalar> W_mu, W_sigma, W_w;
  Vec<Scalar> b_mu, b_sigma, b_w;

  Index hidden() const { return W_in.rows(); }
  Index input_dim() const { return W_in.cols(); }
  Index gaussians() const { return W_w.rows(); }
  Index dim() const { return W_w.rows() > 0 ? W_mu.rows() / W_w.rows() : 0; }

  template <typename Self, typename F>
  static void visit_impl(Self& s, const std::string& prefix, F&& f) {
    f(prefix + "W_in", s.W_in);
    f(prefix + "b_in", s.b_in);
    f(prefix + "U_mu", s.U_mu);
    f(prefix + "c_mu", s.c_mu);
    f(prefix + "U_sigma", s.U_sigma);
    f(prefix + "c_sigma", s.c_sigma);
    f(prefix + "U_w", s.U_w);
    f(prefix + "c_w", s.c_w);
    f(prefix + "W_mu", s.W_mu);
    f(prefix + "b_mu", s.b_mu);
    f(prefix + "W_sigma", s.W_sigma);
    f(prefix + "b_sigma", s.b_sigma);
    f(prefix + "W_w", s.W_w);
    f(prefix + "b_w", s.b_w);
  }
  template <typename F>
  void visit(const std::string& prefix, F&& f) { visit_impl(*this, prefix, f); }
  template <typename F>
  void visit(const std::string& prefix, F&& f) const { visit_impl(*this, prefix, f); }

  static EncoderParams zeros(Index c_in, Index embed_dim, Index hidden, Index G, Index d) {
    EncoderParams p;
    p.W_in = Mat<Scalar>::Zero(hidden, c_in + embed_dim);
    p.b_in = Vec<Scalar>::Zero(hidden);
    p.U_mu = p.U_sigma = p.U_w = Mat<Scalar>::Zero(hidden, hidden);
    p.c_mu = p.c_sigma = p.c_w = Vec<Scalar>::Zero(hidden);
    p.W_mu = Mat<Scalar>::Zero(G * d, hidden);
    p.W_sigma = Mat<Scalar>::Zero(G * d, hidden);
    p.W_w = Mat<Scalar>::Zero(G, hidden);
    p.b_mu = Vec<Scalar>::Zero(G * d);
    p.b_sigma = Vec<Scalar>::Zero(G * d);
    p.b_w = Vec<Scalar>::Zero(G);
    return p;
  }

  // He-style hidden layers. The scale head bias starts at softplus^-1(sigma0)
  // so particles begin at a few grid spacings rather than ln 2.
  static EncoderParams random(Index c_in, Index embed_dim, Index hidden, Index G, Index d, std::mt19937_64& rng,
                              double sigma0 = 0.3, double head_gain = 0.5) {
    EncoderParams p = zeros(c_in, embed_dim, hidden, G, d);
    const double relu_gain = std::sqrt(2.0);
    p.W_in = nn::init_weight<Scalar>(hidden, c_in + embed_dim, rng, relu_gain);
    p.U_mu = nn::init_weight<Scalar>(hidden, hidden, rng, relu_gain);
    p.U_sigma = nn::init_weight<Scalar>(hidden, hidden, rng, relu_gain);
    p.U_w = nn::init_weight<Scalar>(hidden, hidden, rng, relu_gain);
    p.W_mu = nn::init_weight<Scalar>(G * d, hidden, rng, head_gain);
    p.W_sigma = nn::init_weight<Scalar>(G * d, hidden, rng, head_gain);
    p.W_w = nn::init_weight<Scalar>(G, hidden, rng, head_gain);
    p.b_mu.setConstant(Scalar(0.5));
    p.b_sigma.setConstant(static_cast<Scalar>(std::log(std::expm1(sigma0))));
    return p;
  }
};

template <typename Scalar>
struct EncoderCache {
  Mat<Scalar> eta, pre_in, phi;
  Mat<Scalar> pre_mu, h_mu, pre_sigma, h_sigma, sigma_logit, pre_w, h_w;
  GaussianField<Scalar> out;
};

inline constexpr double kSigmaFloor = 1e-6;

// eta_j = [a_j, gamma(x_j)] -> (mu, sigma, w) per site.
template <typename Scalar>
GaussianField<Scalar> encode(const SampledField<Scalar>& field, const FourierEmbedding<Scalar>& emb,
                             const EncoderParams<Scalar>& p, EncoderCache<Scalar>* cache = nullptr) {
  const Index n = field.size();
  const Index G = p.gaussians();
  const Index d = field.points.dim();
  require_shape(p.input_dim() == field.channels() + emb.output_dim(),
                "encode: W_in expects " + std::to_string(p.input_dim()) + " inputs, got " +
                    std::to_string(field.channels() + emb.output_dim()));
  require_shape(p.W_mu.rows() == G * d && p.W_sigma.rows() == G * d, "encode: head shapes inconsistent with G*d");

  EncoderCache<Scalar> local;
  EncoderCache<Scalar>& c = cache ? *cache : local;
  c.eta.resize(n, p.input_dim());
  c.eta.leftCols(field.channels()) = field.values;
  c.eta.rightCols(emb.output_dim()) = embed_coords(field.points, emb);

  c.pre_in = nn::affine(c.eta, p.W_in, p.b_in);
  c.phi = nn::relu(c.pre_in);
  check_finite(c.phi, "encoder input layer");

  c.pre_mu = nn::affine(c.phi, p.U_mu, p.c_mu);
  c.h_mu = nn::relu(c.pre_mu);
  c.pre_sigma = nn::affine(c.phi, p.U_sigma, p.c_sigma);
  c.h_sigma = nn::relu(c.pre_sigma);
  c.pre_w = nn::affine(c.phi, p.U_w, p.c_w);
  c.h_w = nn::relu(c.pre_w);

  GaussianField<Scalar> gf;
  gf.G = G;
  gf.d = d;
  gf.mu = nn::affine(c.h_mu, p.W_mu, p.b_mu);
  check_finite(gf.mu, "encoder mu head");
  c.sigma_logit = nn::affine(c.h_sigma, p.W_sigma, p.b_sigma);
  gf.sigma = c.sigma_logit.unaryExpr([](Scalar x) { return std::max(nn::softplus(x), Scalar(kSigmaFloor)); });
  check_finite(gf.sigma, "encoder sigma head");
  gf.w = nn::softmax_rows(nn::affine(c.h_w, p.W_w, p.b_w));
  check_finite(gf.w, "encoder weight head");
  (void)n;
  if (cache) c.out = gf;
  return gf;
}

// Accumulates parameter gradients for upstream gradients on (mu, sigma, w).
template <typename Scalar>
void encode_backward(const EncoderCache<Scalar>& c, const EncoderParams<Scalar>& p, const GaussianField<Scalar>& dgf,
                     EncoderParams<Scalar>& grad) {
  // mu head
  grad.W_mu.noalias() += dgf.mu.transpose() * c.h_mu;
  grad.b_mu += dgf.mu.colwise().sum().transpose();
  Mat<Scalar> dpre_mu = nn::relu_backward<Scalar>(dgf.mu * p.W_mu, c.pre_mu);

  // sigma head: max(softplus(x), floor)
  const Mat<Scalar> dlogit = c.sigma_logit.binaryExpr(dgf.sigma, [](Scalar x, Scalar g) {
    return nn::softplus(x) > Scalar(kSigmaFloor) ? g * nn::sigmoid(x) : Scalar(0);
  });
  grad.W_sigma.noalias() += dlogit.transpose() * c.h_sigma;
  grad.b_sigma += dlogit.colwise().sum().transpose();
  Mat<Scalar> dpre_sigma = nn::relu_backward<Scalar>(dlogit * p.W_sigma, c.pre_sigma);

  // weight head
  const Mat<Scalar> dwl = nn::softmax_rows_backward<Scalar>(dgf.w, c.out.w);
  grad.W_w.noalias() += dwl.transpose() * c.h_w;
  grad.b_w += dwl.colwise().sum().transpose();
  Mat<Scalar> dpre_w = nn::relu_backward<Scalar>(dwl * p.W_w, c.pre_w);

  grad.U_mu.noalias() += dpre_mu.transpose() * c.phi;
  grad.c_mu += dpre_mu.colwise().sum().transpose();
  grad.U_sigma.noalias() += dpre_sigma.transpose() * c.phi;
  grad.c_sigma += dpre_sigma.colwise().sum().transpose();
  grad.U_w.noalias() += dpre_w.transpose() * c.phi;
  grad.c_w += dpre_w.colwise().sum().transpose();

  Mat<Scalar> dphi = dpre_mu * p.U_mu;
  dphi.noalias() += dpre_sigma * p.U_sigma;
  dphi.noalias() += dpre_w * p.U_w;
  const Mat<Scalar> dpre_in = nn::relu_backward<Scalar>(dphi, c.pre_in);
  grad.W_in.noalias() += dpre_in.transpose() * c.eta;
  grad.b_in += dpre_in.colwise().sum().transpose();
}

// exp(-1/2 ||(q - mu) / sigma||^2)
template <typename Scalar>
Scalar gaussian_kernel(const Eigen::Ref<const RowVec<Scalar>>& query, const Eigen::Ref<const RowVec<Scalar>>& mu,
                       const Eigen::Ref<const RowVec<Scalar>>& sigma) {
  require_shape(query.size() == mu.size() && mu.size() == sigma.size(), "gaussian_kernel: dimension mismatch");
  if ((sigma.array() <= Scalar(0)).any()) throw DomainError("gaussian_kernel: sigma must be positive");
  const Scalar q = ((query - mu).array() / sigma.array()).square().sum();
  return std::exp(Scalar(-0.5) * q);
}

// z_{j,i} = w_{j,i} * kernel(x_j; mu_{j,i}, sigma_{j,i}), site j evaluated at query j.
template <typename Scalar>
Mat<Scalar> evaluate_basis(const GaussianField<Scalar>& gf, const PointSet<Scalar>& queries) {
  require_shape(queries.size() == gf.size(), "evaluate_basis: query count must equal site count");
  require_shape(queries.dim() == gf.d, "evaluate_basis: query dimension mismatch");
  const Index n = gf.size(), G = gf.G, d = gf.d;
  Mat<Scalar> z(n, G);
  for (Index i = 0; i < G; ++i) {
    const auto u = ((queries.coords - gf.mu.middleCols(i * d, d)).array() / gf.sigma.middleCols(i * d, d).array());
    z.col(i) = gf.w.col(i).array() * (Scalar(-0.5) * u.square().rowwise().sum()).exp();
  }
  return z;
}

// Gradients of evaluate_basis with respect to (mu, sigma, w), accumulated into dgf.
template <typename Scalar>
void evaluate_basis_backward(const GaussianField<Scalar>& gf, const PointSet<Scalar>& queries, const Mat<Scalar>& dz,
                             GaussianField<Scalar>& dgf) {
  const Index G = gf.G, d = gf.d;
  for (Index i = 0; i < G; ++i) {
    const Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic> u =
        (queries.coords - gf.mu.middleCols(i * d, d)).array() / gf.sigma.middleCols(i * d, d).array();
    const Eigen::Array<Scalar, Eigen::Dynamic, 1> k = (Scalar(-0.5) * u.square().rowwise().sum()).exp();
    dgf.w.col(i).array() += dz.col(i).array() * k;
    const Eigen::Array<Scalar, Eigen::Dynamic, 1> dk = dz.col(i).array() * gf.w.col(i).array() * k;
    const auto inv_sigma = gf.sigma.middleCols(i * d, d).array().inverse();
    dgf.mu.middleCols(i * d, d).array() += (u * inv_sigma).colwise() * dk;
    dgf.sigma.middleCols(i * d, d).array() += (u.square() * inv_sigma).colwise() * dk;
  }
}

template <typename Scalar>
struct DecoderParams {
  Mat<Scalar> W1;
  Vec<Scalar> b1;
  Mat<Scalar> W2;
  Vec<Scalar> b2;

  Index input_dim() const { return W1.cols(); }
  Index output_dim() const { return W2.rows(); }

  template <typename Self, typename F>
  static void visit_impl(Self& s, const std::string& prefix, F&& f) {
    f(prefix + "W1", s.W1);
    f(prefix + "b1", s.b1);
    f(prefix + "W2", s.W2);
    f(prefix + "b2", s.b2);
  }
  template <typename F>
  void visit(const std::string& prefix, F&& f) { visit_impl(*this, prefix, f); }
  template <typename F>
  void visit(const std::string& prefix, F&& f) const { visit_impl(*this, prefix, f); }

  static DecoderParams zeros(Index G, Index hidden, Index c_out) {
    DecoderParams p;
    p.W1 = Mat<Scalar>::Zero(hidden, G);
    p.b1 = Vec<Scalar>::Zero(hidden);
    p.W2 = Mat<Scalar>::Zero(c_out, hidden);
    p.b2 = Vec<Scalar>::Zero(c_out);
    return p;
  }

  static DecoderParams random(Index G, Index hidden, Index c_out, std::mt19937_64& rng) {
    DecoderParams p = zeros(G, hidden, c_out);
    p.W1 = nn::init_weight<Scalar>(hidden, G, rng, std::sqrt(2.0));
    p.W2 = nn::init_weight<Scalar>(c_out, hidden, rng, 1.0);
    return p;
  }
};

template <typename Scalar>
struct DecoderCache {
  Mat<Scalar> z, pre, h;
};

template <typename Scalar>
Mat<Scalar> decode(const Mat<Scalar>& z, const DecoderParams<Scalar>& p, DecoderCache<Scalar>* cache = nullptr) {
  require_shape(z.cols() == p.input_dim(), "decode: expected " + std::to_string(p.input_dim()) + " basis columns");
  Mat<Scalar> pre = nn::affine(z, p.W1, p.b1);
  Mat<Scalar> h = nn::relu(pre);
  Mat<Scalar> out = nn::affine(h, p.W2, p.b2);
  if (cache) {
    cache->z = z;
    cache->pre = std::move(pre);
    cache->h = std::move(h);
  }
  return out;
}

// Returns dL/dz.
template <typename Scalar>
Mat<Scalar> decode_backward(const DecoderCache<Scalar>& c, const DecoderParams<Scalar>& p, const Mat<Scalar>& dout,
                            DecoderParams<Scalar>& grad) {
  grad.W2.noalias() += dout.transpose() * c.h;
  grad.b2 += dout.colwise().sum().transpose();
  const Mat<Scalar> dpre = nn::relu_backward<Scalar>(dout * p.W2, c.pre);
  grad.W1.noalias() += dpre.transpose() * c.z;
  grad.b1 += dpre.colwise().sum().transpose();
  return dpre * p.W1;
}

// Mean squared distance between each site's weighted particle barycenter and its coordinate.
template <typename Scalar>
Scalar reg_mu(const GaussianField<Scalar>& gf, const PointSet<Scalar>& pts) {
  require_shape(pts.size() == gf.size() && pts.dim() == gf.d, "reg_mu: shape mismatch");
  Mat<Scalar> bary = -pts.coords;
  for (Index i = 0; i < gf.G; ++i)
    bary += (gf.mu.middleCols(i * gf.d, gf.d).array().colwise() * gf.w.col(i).array()).matrix();
  return bary.squaredNorm() / static_cast<Scalar>(gf.size());
}

template <typename Scalar>
void reg_mu_backward(const GaussianField<Scalar>& gf, const PointSet<Scalar>& pts, Scalar scale,
                     GaussianField<Scalar>& dgf) {
  Mat<Scalar> bary = -pts.coords;
  for (Index i = 0; i < gf.G; ++i)
    bary += (gf.mu.middleCols(i * gf.d, gf.d).array().colwise() * gf.w.col(i).array()).matrix();
  const Mat<Scalar> db = (Scalar(2) * scale / static_cast<Scalar>(gf.size())) * bary;
  for (Index i = 0; i < gf.G; ++i) {
    dgf.w.col(i) += db.cwiseProduct(gf.mu.middleCols(i * gf.d, gf.d)).rowwise().sum();
    dgf.mu.middleCols(i * gf.d, gf.d) += (db.array().colwise() * gf.w.col(i).array()).matrix();
  }
}

// Mean hinge penalty keeping every scale inside [sigma_min, sigma_max].
template <typename Scalar>
Scalar reg_sigma(const GaussianField<Scalar>& gf, Scalar sigma_min, Scalar sigma_max) {
  if (!(sigma_min > Scalar(0) && sigma_min < sigma_max)) throw DomainError("reg_sigma: need 0 < sigma_min < sigma_max");
  const auto& s = gf.sigma.array();
  const Scalar total = (s - sigma_max).cwiseMax(Scalar(0)).sum() + (sigma_min - s).cwiseMax(Scalar(0)).sum();
  return total / static_cast<Scalar>(gf.sigma.size());
}

template <typename Scalar>
void reg_sigma_backward(const GaussianField<Scalar>& gf, Scalar sigma_min, Scalar sigma_max, Scalar scale,
                        GaussianField<Scalar>& dgf) {
  const Scalar unit = scale / static_cast<Scalar>(gf.sigma.size());
  dgf.sigma += gf.sigma.unaryExpr([&](Scalar s) {
    if (s > sigma_max) return unit;
    if (s < sigma_min) return -unit;
    return Scalar(0);
  });
}

}  // namespace gpo
