#pragma once

// Operator composition: decoder o (PG layer)^n o basis evaluation o encoder.
// The particle field is predicted once on the context points and conditions
// every stage.

#include "gpo/gaussian_basis.hpp"
#include "gpo/pg_attention.hpp"

#include <algorithm>
#include <cstdlib>
#include <limits>
#include <random>
#include <string>
#include <vector>

namespace gpo {

enum class EncoderKind {
  Gaussian,  // particles + weighted kernel evaluation
  PlainMlp,  // ablation: MLP straight to the N x G basis, no particles
};

enum class QueryAssignment {
  Nearest,   // each query takes the particles of its nearest context site
  KNearest,  // average over the k nearest sites
};

struct ModelConfig {
  Index c_in = 1;
  Index c_out = 1;
  Index dim = 2;
  Index hidden_dim = 64;
  Index num_layers = 4;
  Index num_heads = 4;
  Index num_gaussians = 16;
  Index head_dim = 0;        // 0: hidden_dim / num_heads (at least 1)
  Index decoder_hidden = 0;  // 0: hidden_dim
  Index fourier_m = 16;
  double sigma_B = 1.0;
  double lambda = 0.5;
  bool learn_lambda = false;
  double eps = 1e-8;
  bool tie_wz = false;
  RenormMode renorm = RenormMode::Shift;
  double sigma_min = 1e-3;
  double sigma_max = 0.5;
  double sigma_init = 0.3;
  double reg_mu_weight = 1e-2;
  double reg_sigma_weight = 1e-3;
  double aux_weight = 0.0;
  EncoderKind encoder = EncoderKind::Gaussian;
  QueryAssignment query = QueryAssignment::Nearest;
  Index knn_k = 4;

  Index resolved_head_dim() const {
    if (head_dim > 0) return head_dim;
    return std::max<Index>(1, hidden_dim / std::max<Index>(1, num_heads));
  }
  Index resolved_decoder_hidden() const { return decoder_hidden > 0 ? decoder_hidden : hidden_dim; }

  void validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("model." + m); };
    if (c_in < 1) fail("c_in: must be >= 1");
    if (c_out < 1) fail("c_out: must be >= 1");
    if (dim < 1 || dim > 3) fail("dim: must be 1, 2 or 3");
    if (hidden_dim < 1) fail("hidden_dim: must be >= 1");
    if (num_layers < 0) fail("num_layers: must be >= 0");
    if (num_heads < 1) fail("num_heads: must be >= 1");
    if (num_gaussians < 1) fail("num_gaussians: must be >= 1");
    if (head_dim < 0) fail("head_dim: must be >= 0");
    if (fourier_m < 1) fail("fourier_m: must be >= 1");
    if (!(sigma_B > 0)) fail("sigma_B: must be positive");
    if (!(lambda >= 0 && lambda <= 1)) fail("lambda: must lie in [0,1]");
    if (learn_lambda && !(lambda > 0 && lambda < 1)) fail("lambda: learnable mixing needs 0 < lambda < 1");
    if (!(eps > 0)) fail("eps: must be positive");
    if (!(sigma_min > 0 && sigma_min < sigma_max)) fail("sigma_min/sigma_max: need 0 < sigma_min < sigma_max");
    if (!(sigma_init > 0)) fail("sigma_init: must be positive");
    if (reg_mu_weight < 0 || reg_sigma_weight < 0 || aux_weight < 0) fail("regularizer weights must be >= 0");
    if (knn_k < 1) fail("knn_k: must be >= 1");
  }
};

// Ablation encoder: four ReLU layers and a softplus head emitting Z directly.
template <typename Scalar>
struct MlpEncoderParams {
  Mat<Scalar> W_in, U1, U2, U3, W_head;
  Vec<Scalar> b_in, c1, c2, c3, b_head;

  template <typename Self, typename F>
  static void visit_impl(Self& s, const std::string& prefix, F&& f) {
    f(prefix + "W_in", s.W_in);
    f(prefix + "b_in", s.b_in);
    f(prefix + "U1", s.U1);
    f(prefix + "c1", s.c1);
    f(prefix + "U2", s.U2);
    f(prefix + "c2", s.c2);
    f(prefix + "U3", s.U3);
    f(prefix + "c3", s.c3);
    f(prefix + "W_head", s.W_head);
    f(prefix + "b_head", s.b_head);
  }
  template <typename F>
  void visit(const std::string& prefix, F&& f) { visit_impl(*this, prefix, f); }
  template <typename F>
  void visit(const std::string& prefix, F&& f) const { visit_impl(*this, prefix, f); }

  static MlpEncoderParams random(Index in, Index hidden, Index G, std::mt19937_64& rng) {
    MlpEncoderParams p;
    const double g = std::sqrt(2.0);
    p.W_in = nn::init_weight<Scalar>(hidden, in, rng, g);
    p.U1 = nn::init_weight<Scalar>(hidden, hidden, rng, g);
    p.U2 = nn::init_weight<Scalar>(hidden, hidden, rng, g);
    p.U3 = nn::init_weight<Scalar>(hidden, hidden, rng, g);
    p.W_head = nn::init_weight<Scalar>(G, hidden, rng, 0.5);
    p.b_in = p.c1 = p.c2 = p.c3 = Vec<Scalar>::Zero(hidden);
    p.b_head = Vec<Scalar>::Zero(G);
    return p;
  }
};

template <typename Scalar>
struct MlpEncoderCache {
  Mat<Scalar> eta, pre0, h0, pre1, h1, pre2, h2, pre3, h3, logits;
};

template <typename Scalar>
Mat<Scalar> mlp_encode(const SampledField<Scalar>& field, const FourierEmbedding<Scalar>& emb,
                       const MlpEncoderParams<Scalar>& p, MlpEncoderCache<Scalar>& c) {
  c.eta.resize(field.size(), field.channels() + emb.output_dim());
  c.eta.leftCols(field.channels()) = field.values;
  c.eta.rightCols(emb.output_dim()) = embed_coords(field.points, emb);
  require_shape(p.W_in.cols() == c.eta.cols(), "mlp_encode: input width mismatch");
  c.pre0 = nn::affine(c.eta, p.W_in, p.b_in);
  c.h0 = nn::relu(c.pre0);
  c.pre1 = nn::affine(c.h0, p.U1, p.c1);
  c.h1 = nn::relu(c.pre1);
  c.pre2 = nn::affine(c.h1, p.U2, p.c2);
  c.h2 = nn::relu(c.pre2);
  c.pre3 = nn::affine(c.h2, p.U3, p.c3);
  c.h3 = nn::relu(c.pre3);
  c.logits = nn::affine(c.h3, p.W_head, p.b_head);
  Mat<Scalar> z = c.logits.unaryExpr([](Scalar x) { return nn::softplus(x); });
  check_finite(z, "MLP encoder");
  return z;
}

template <typename Scalar>
void mlp_encode_backward(const MlpEncoderCache<Scalar>& c, const MlpEncoderParams<Scalar>& p, const Mat<Scalar>& dz,
                         MlpEncoderParams<Scalar>& g) {
  const Mat<Scalar> dl = dz.cwiseProduct(c.logits.unaryExpr([](Scalar x) { return nn::sigmoid(x); }));
  g.W_head.noalias() += dl.transpose() * c.h3;
  g.b_head += dl.colwise().sum().transpose();
  Mat<Scalar> d3 = nn::relu_backward<Scalar>(dl * p.W_head, c.pre3);
  g.U3.noalias() += d3.transpose() * c.h2;
  g.c3 += d3.colwise().sum().transpose();
  Mat<Scalar> d2 = nn::relu_backward<Scalar>(d3 * p.U3, c.pre2);
  g.U2.noalias() += d2.transpose() * c.h1;
  g.c2 += d2.colwise().sum().transpose();
  Mat<Scalar> d1 = nn::relu_backward<Scalar>(d2 * p.U2, c.pre1);
  g.U1.noalias() += d1.transpose() * c.h0;
  g.c1 += d1.colwise().sum().transpose();
  Mat<Scalar> d0 = nn::relu_backward<Scalar>(d1 * p.U1, c.pre0);
  g.W_in.noalias() += d0.transpose() * c.eta;
  g.b_in += d0.colwise().sum().transpose();
}

inline Index gaussian_encoder_param_count(Index in, Index hidden, Index G, Index d) {
  return hidden * (in + 1) + 3 * hidden * (hidden + 1) + (2 * G * d + G) * (hidden + 1);
}

inline Index mlp_encoder_param_count(Index in, Index hidden, Index G) {
  return hidden * (in + 1) + 3 * hidden * (hidden + 1) + G * (hidden + 1);
}

// Hidden width at which the MLP encoder has the Gaussian encoder's parameter count.
inline Index matched_mlp_width(Index in, Index hidden, Index G, Index d) {
  const Index target = gaussian_encoder_param_count(in, hidden, G, d);
  Index best = hidden;
  for (Index h = hidden; h <= 4 * hidden + 8; ++h)
    if (std::abs(mlp_encoder_param_count(in, h, G) - target) < std::abs(mlp_encoder_param_count(in, best, G) - target))
      best = h;
  return best;
}

// Geometry handed to the PG layers when no particles exist: centers on the
// site, unit scales, uniform weights.
template <typename Scalar>
GaussianField<Scalar> null_geometry(const PointSet<Scalar>& pts, Index G) {
  GaussianField<Scalar> gf = GaussianField<Scalar>::zeros(pts.size(), G, pts.dim());
  for (Index i = 0; i < G; ++i) gf.mu.middleCols(i * pts.dim(), pts.dim()) = pts.coords;
  gf.sigma.setOnes();
  gf.w.setConstant(Scalar(1) / static_cast<Scalar>(G));
  return gf;
}

template <typename Scalar>
struct GPOModel {
  ModelConfig cfg;
  FourierEmbedding<Scalar> emb;  // frozen, not a learnable parameter
  EncoderParams<Scalar> enc;
  MlpEncoderParams<Scalar> mlp;
  std::vector<PGAttentionParams<Scalar>> layers;
  DecoderParams<Scalar> dec;

  Index gaussians() const { return cfg.num_gaussians; }

  template <typename Self, typename F>
  static void visit_impl(Self& s, F&& f) {
    if (s.cfg.encoder == EncoderKind::Gaussian)
      s.enc.visit("encoder.", f);
    else
      s.mlp.visit("mlp_encoder.", f);
    for (std::size_t k = 0; k < s.layers.size(); ++k) s.layers[k].visit("layers." + std::to_string(k) + ".", f);
    s.dec.visit("decoder.", f);
  }
  // Visits every learnable tensor as f(name, tensor).
  template <typename F>
  void visit_params(F&& f) { visit_impl(*this, f); }
  template <typename F>
  void visit_params(F&& f) const { visit_impl(*this, f); }

  Index parameter_count() const {
    Index n = 0;
    visit_params([&](const std::string&, const auto& t) { n += t.size(); });
    return n;
  }

  // Same structure, every learnable tensor zero (gradient accumulator).
  GPOModel zeros_like() const {
    GPOModel z = *this;
    z.visit_params([](const std::string&, auto& t) { t.setZero(); });
    return z;
  }
};

template <typename Scalar>
GPOModel<Scalar> make_model(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  GPOModel<Scalar> m;
  m.cfg = cfg;
  const Index G = cfg.num_gaussians, d = cfg.dim, D = cfg.resolved_head_dim();
  m.emb = make_fourier_embedding<Scalar>(cfg.fourier_m, d, cfg.sigma_B, rng);
  const Index in = cfg.c_in + m.emb.output_dim();
  if (cfg.encoder == EncoderKind::Gaussian)
    m.enc = EncoderParams<Scalar>::random(cfg.c_in, m.emb.output_dim(), cfg.hidden_dim, G, d, rng, cfg.sigma_init);
  else
    m.mlp = MlpEncoderParams<Scalar>::random(in, matched_mlp_width(in, cfg.hidden_dim, G, d), G, rng);
  for (Index k = 0; k < cfg.num_layers; ++k) {
    auto layer = PGAttentionParams<Scalar>::random(G, d, D, cfg.num_heads, rng, cfg.tie_wz);
    layer.lambda = static_cast<Scalar>(cfg.lambda);
    layer.eps = static_cast<Scalar>(cfg.eps);
    layer.renorm = cfg.renorm;
    if (cfg.learn_lambda) {
      layer.lambda_logit = Mat<Scalar>::Constant(1, 1, static_cast<Scalar>(std::log(cfg.lambda / (1 - cfg.lambda))));
    }
    m.layers.push_back(std::move(layer));
  }
  m.dec = DecoderParams<Scalar>::random(G, cfg.resolved_decoder_hidden(), cfg.c_out, rng);
  return m;
}

template <typename Scalar>
struct ForwardCache {
  PointSet<Scalar> points;
  EncoderCache<Scalar> enc;
  MlpEncoderCache<Scalar> mlp;
  GaussianField<Scalar> gf;
  std::vector<Mat<Scalar>> Z;  // Z^(0) .. Z^(n)
  std::vector<PGLayerCache<Scalar>> layers;
  DecoderCache<Scalar> dec;
};

// Runs the PG stack and decoder from a given basis; shared by context and query paths.
template <typename Scalar>
Mat<Scalar> forward_from_basis(const GPOModel<Scalar>& model, Mat<Scalar> Z, const GaussianField<Scalar>& gf,
                               ForwardCache<Scalar>* cache = nullptr) {
  if (cache) {
    cache->Z.assign(1, Z);
    cache->layers.assign(model.layers.size(), PGLayerCache<Scalar>{});
  }
  for (std::size_t k = 0; k < model.layers.size(); ++k) {
    try {
      Z = pg_layer(Z, gf, model.layers[k], cache ? &cache->layers[k] : nullptr);
    } catch (const NumericalFault& e) {
      throw NumericalFault("PG stage " + std::to_string(k) + ": " + e.what());
    }
    if (cache) cache->Z.push_back(Z);
  }
  Mat<Scalar> out = decode(Z, model.dec, cache ? &cache->dec : nullptr);
  check_finite(out, "decoder output");
  return out;
}

// Particle field and Z^(0) on the field's own points.
template <typename Scalar>
std::pair<GaussianField<Scalar>, Mat<Scalar>> encode_and_evaluate(const GPOModel<Scalar>& model,
                                                                  const SampledField<Scalar>& a,
                                                                  ForwardCache<Scalar>* cache = nullptr) {
  require_shape(a.channels() == model.cfg.c_in, "forward: input has " + std::to_string(a.channels()) +
                                                    " channels, model expects " + std::to_string(model.cfg.c_in));
  if (model.cfg.encoder == EncoderKind::PlainMlp) {
    MlpEncoderCache<Scalar> local;
    Mat<Scalar> Z = mlp_encode(a, model.emb, model.mlp, cache ? cache->mlp : local);
    return {null_geometry(a.points, model.gaussians()), std::move(Z)};
  }
  GaussianField<Scalar> gf = encode(a, model.emb, model.enc, cache ? &cache->enc : nullptr);
  Mat<Scalar> Z = evaluate_basis(gf, a.points);
  return {std::move(gf), std::move(Z)};
}

// Prediction on the input's own points (N x c_out).
template <typename Scalar>
Mat<Scalar> forward(const GPOModel<Scalar>& model, const SampledField<Scalar>& a, ForwardCache<Scalar>* cache = nullptr) {
  auto [gf, Z] = encode_and_evaluate(model, a, cache);
  if (cache) {
    cache->points = a.points;
    cache->gf = gf;
  }
  return forward_from_basis(model, std::move(Z), gf, cache);
}

// Accumulates parameter gradients for dL/d(prediction) and for extra
// upstream gradients on the particle field (regularizers).
template <typename Scalar>
void backward(const GPOModel<Scalar>& model, const ForwardCache<Scalar>& c, const Mat<Scalar>& dout,
              const GaussianField<Scalar>* dgf_extra, GPOModel<Scalar>& grad) {
  Mat<Scalar> dZ = decode_backward(c.dec, model.dec, dout, grad.dec);
  const Index n = c.points.size();
  GaussianField<Scalar> dgf = GaussianField<Scalar>::zeros(n, c.gf.G, c.gf.d);
  for (std::size_t k = model.layers.size(); k-- > 0;) {
    auto in = pg_layer_backward(c.layers[k], model.layers[k], c.gf, dZ, grad.layers[k]);
    dZ = std::move(in.dZ);
    dgf.mu += in.dgf.mu;
    dgf.sigma += in.dgf.sigma;
    dgf.w += in.dgf.w;
  }
  if (model.cfg.encoder == EncoderKind::PlainMlp) {
    mlp_encode_backward(c.mlp, model.mlp, dZ, grad.mlp);
    return;
  }
  evaluate_basis_backward(c.gf, c.points, dZ, dgf);
  if (dgf_extra) {
    dgf.mu += dgf_extra->mu;
    dgf.sigma += dgf_extra->sigma;
    dgf.w += dgf_extra->w;
  }
  encode_backward(c.enc, model.enc, dgf, grad.enc);
}

// Indices of the k nearest context points for each query (ties: lower index).
template <typename Scalar>
std::vector<std::vector<Index>> nearest_sites(const PointSet<Scalar>& context, const PointSet<Scalar>& queries, Index k) {
  require_shape(context.dim() == queries.dim(), "nearest_sites: dimension mismatch");
  k = std::min(k, context.size());
  std::vector<std::vector<Index>> out(static_cast<std::size_t>(queries.size()));
  std::vector<std::pair<Scalar, Index>> best;
  for (Index m = 0; m < queries.size(); ++m) {
    best.clear();
    for (Index j = 0; j < context.size(); ++j) {
      const Scalar d2 = (context.coords.row(j) - queries.coords.row(m)).squaredNorm();
      if (static_cast<Index>(best.size()) < k || d2 < best.back().first) {
        auto it = std::upper_bound(best.begin(), best.end(), std::make_pair(d2, j),
                                   [](const auto& a, const auto& b) { return a.first < b.first; });
        best.insert(it, {d2, j});
        if (static_cast<Index>(best.size()) > k) best.pop_back();
      }
    }
    auto& o = out[static_cast<std::size_t>(m)];
    for (const auto& b : best) o.push_back(b.second);
  }
  return out;
}

struct QueryDiagnostics {
  bool far_extrapolation = false;  // some query outside [-0.5, 1.5]^d
  Index far_count = 0;
};

// Keeps the particle field predicted on the context points and re-evaluates
// the basis at arbitrary query locations.
template <typename Scalar>
SampledField<Scalar> forward_at_queries(const GPOModel<Scalar>& model, const SampledField<Scalar>& a,
                                        const PointSet<Scalar>& queries, QueryDiagnostics* diag = nullptr) {
  require_shape(queries.dim() == a.points.dim(), "forward_at_queries: query dimension mismatch");
  QueryDiagnostics local;
  QueryDiagnostics& dg = diag ? *diag : local;
  for (Index m = 0; m < queries.size(); ++m)
    if ((queries.coords.row(m).array() < Scalar(-0.5)).any() || (queries.coords.row(m).array() > Scalar(1.5)).any())
      ++dg.far_count;
  dg.far_extrapolation = dg.far_count > 0;

  auto [gf, Z0ctx] = encode_and_evaluate(model, a);
  const bool knn = model.cfg.query == QueryAssignment::KNearest;
  const auto nbrs = nearest_sites(a.points, queries, knn ? model.cfg.knn_k : 1);
  const Index k = static_cast<Index>(nbrs.front().size());

  if (model.cfg.encoder == EncoderKind::PlainMlp) {
    // No particles to re-evaluate: carry the neighbours' coefficients.
    Mat<Scalar> Z = Mat<Scalar>::Zero(queries.size(), model.gaussians());
    for (Index m = 0; m < queries.size(); ++m)
      for (Index r = 0; r < k; ++r) Z.row(m) += Z0ctx.row(nbrs[static_cast<std::size_t>(m)][static_cast<std::size_t>(r)]);
    Z /= static_cast<Scalar>(k);
    Mat<Scalar> out = forward_from_basis(model, std::move(Z), null_geometry(queries, model.gaussians()));
    return SampledField<Scalar>(queries, std::move(out));
  }

  Mat<Scalar> Z;
  GaussianField<Scalar> gq;
  for (Index r = 0; r < k; ++r) {
    std::vector<Index> idx(static_cast<std::size_t>(queries.size()));
    for (Index m = 0; m < queries.size(); ++m)
      idx[static_cast<std::size_t>(m)] = nbrs[static_cast<std::size_t>(m)][static_cast<std::size_t>(r)];
    GaussianField<Scalar> g = gather_sites(gf, idx);
    Mat<Scalar> z = evaluate_basis(g, queries);
    if (r == 0) {
      Z = std::move(z);
      gq = std::move(g);
    } else {
      Z += z;
      gq.mu += g.mu;
      gq.sigma += g.sigma;
      gq.w += g.w;
    }
  }
  if (k > 1) {
    const Scalar inv = Scalar(1) / static_cast<Scalar>(k);
    Z *= inv;
    gq.mu *= inv;
    gq.sigma *= inv;
    gq.w *= inv;
  }
  Mat<Scalar> out = forward_from_basis(model, std::move(Z), gq);
  return SampledField<Scalar>(queries, std::move(out));
}

// Per-stage basis matrices Z^(0..n) for a single input.
template <typename Scalar>
std::vector<Mat<Scalar>> stage_bases(const GPOModel<Scalar>& model, const SampledField<Scalar>& a,
                                     ForwardCache<Scalar>* cache_out = nullptr) {
  ForwardCache<Scalar> c;
  forward(model, a, &c);
  std::vector<Mat<Scalar>> z = c.Z;
  if (cache_out) *cache_out = std::move(c);
  return z;
}

// A^(k)(x_j) = sum_g Z^(k)_{j,g}, for k = 0..n.
template <typename Scalar>
std::vector<Vec<Scalar>> layer_activation_summary(const GPOModel<Scalar>& model, const SampledField<Scalar>& a) {
  std::vector<Vec<Scalar>> out;
  for (const auto& z : stage_bases(model, a)) out.push_back(z.rowwise().sum());
  return out;
}

}  // namespace gpo
