#pragma once

// Petrov-Galerkin Gaussian attention: modal windows test the trial field
// (N -> G measurement), scaled dot-product attention couples the G modes,
// and the same windows scatter the result back (G -> N), followed by a
// convex residual blend and per-site mass renormalization.

#include "gpo/gaussian_basis.hpp"
#include "gpo/nn.hpp"

#include <cmath>
#include <random>
#include <string>
#include <vector>

namespace gpo {

enum class RenormMode {
  Exact,        // Z' = Zhat * r / s; rows with |s| <= 10 eps are left unscaled
  AdditiveEps,  // Z' = Zhat * r / (s + eps)
  Shift,        // Z' = Zhat + (r - s) / G, no division
};

template <typename Scalar>
struct PGHeadParams {
  Mat<Scalar> W_desc;  // D x G(2d+2)
  Mat<Scalar> W_p;     // G x D
  Mat<Scalar> W_z;     // D x G (empty on heads > 0 when tied)
  Mat<Scalar> W_q, W_k, W_v;  // D x D
};

template <typename Scalar>
struct PGAttentionParams {
  std::vector<PGHeadParams<Scalar>> heads;
  Mat<Scalar> W_out;         // G x (H*D)
  Mat<Scalar> lambda_logit;  // 1 x 1 when the mixing coefficient is learned, else empty
  Scalar lambda = Scalar(0.5);
  Scalar eps = Scalar(1e-8);
  bool tie_wz = false;
  RenormMode renorm = RenormMode::Shift;

  Index num_heads() const { return static_cast<Index>(heads.size()); }
  Index head_dim() const { return heads.empty() ? 0 : heads.front().W_q.rows(); }
  Index gaussians() const { return W_out.rows(); }

  bool learnable_lambda() const { return lambda_logit.size() == 1; }
  Scalar mixing() const { return learnable_lambda() ? nn::sigmoid(lambda_logit(0, 0)) : lambda; }

  const Mat<Scalar>& wz(Index h) const { return tie_wz ? heads.front().W_z : heads[static_cast<std::size_t>(h)].W_z; }
  Mat<Scalar>& wz(Index h) { return tie_wz ? heads.front().W_z : heads[static_cast<std::size_t>(h)].W_z; }

  void validate() const {
    if (!(mixing() >= Scalar(0) && mixing() <= Scalar(1))) throw DomainError("PGAttentionParams: lambda outside [0,1]");
    if (!(eps > Scalar(0))) throw DomainError("PGAttentionParams: eps must be positive");
    require_shape(!heads.empty(), "PGAttentionParams: need at least one head");
    require_shape(W_out.cols() == num_heads() * head_dim(), "PGAttentionParams: W_out width must be H*D");
  }

  template <typename Self, typename F>
  static void visit_impl(Self& s, const std::string& prefix, F&& f) {
    for (std::size_t h = 0; h < s.heads.size(); ++h) {
      const std::string hp = prefix + "head" + std::to_string(h) + ".";
      auto& hd = s.heads[h];
      f(hp + "W_desc", hd.W_desc);
      f(hp + "W_p", hd.W_p);
      if (!s.tie_wz || h == 0) f(hp + "W_z", hd.W_z);
      f(hp + "W_q", hd.W_q);
      f(hp + "W_k", hd.W_k);
      f(hp + "W_v", hd.W_v);
    }
    f(prefix + "W_out", s.W_out);
    if (s.lambda_logit.size() == 1) f(prefix + "lambda_logit", s.lambda_logit);
  }
  template <typename F>
  void visit(const std::string& prefix, F&& f) { visit_impl(*this, prefix, f); }
  template <typename F>
  void visit(const std::string& prefix, F&& f) const { visit_impl(*this, prefix, f); }

  static PGAttentionParams zeros(Index G, Index d, Index D, Index H, bool tie_wz = false) {
    PGAttentionParams p;
    p.tie_wz = tie_wz;
    p.heads.resize(static_cast<std::size_t>(H));
    for (Index h = 0; h < H; ++h) {
      auto& hd = p.heads[static_cast<std::size_t>(h)];
      hd.W_desc = Mat<Scalar>::Zero(D, G * (2 * d + 2));
      hd.W_p = Mat<Scalar>::Zero(G, D);
      if (!tie_wz || h == 0) hd.W_z = Mat<Scalar>::Zero(D, G);
      hd.W_q = hd.W_k = hd.W_v = Mat<Scalar>::Zero(D, D);
    }
    p.W_out = Mat<Scalar>::Zero(G, H * D);
    return p;
  }

  static PGAttentionParams random(Index G, Index d, Index D, Index H, std::mt19937_64& rng, bool tie_wz = false,
                                  double out_gain = 0.1) {
    PGAttentionParams p = zeros(G, d, D, H, tie_wz);
    for (Index h = 0; h < H; ++h) {
      auto& hd = p.heads[static_cast<std::size_t>(h)];
      hd.W_desc = nn::init_weight<Scalar>(D, G * (2 * d + 2), rng);
      hd.W_p = nn::init_weight<Scalar>(G, D, rng);
      if (!tie_wz || h == 0) hd.W_z = nn::init_weight<Scalar>(D, G, rng);
      hd.W_q = nn::init_weight<Scalar>(D, D, rng);
      hd.W_k = nn::init_weight<Scalar>(D, D, rng);
      hd.W_v = nn::init_weight<Scalar>(D, D, rng);
    }
    p.W_out = nn::init_weight<Scalar>(G, H * D, rng, out_gain);
    return p;
  }
};

// Per-head site-to-mode assignments; each P[h] is N x G and row-stochastic.
template <typename Scalar>
struct ModalWindows {
  std::vector<Mat<Scalar>> P;

  // p_bar[j,g] = p[j,g] / sum_j' p[j',g]
  Mat<Scalar> column_normalized(Index h) const {
    const Mat<Scalar>& p = P[static_cast<std::size_t>(h)];
    return (p.array().rowwise() / p.colwise().sum().array()).matrix();
  }
};

template <typename Scalar>
struct ModalTokens {
  std::vector<Mat<Scalar>> T;  // per head G x D
  std::vector<Vec<Scalar>> mass;
  std::vector<std::vector<bool>> degenerate;

  bool any_degenerate() const {
    for (const auto& h : degenerate)
      for (bool b : h)
        if (b) return true;
    return false;
  }
};

template <typename Scalar>
struct ModalCoupling {
  std::vector<Mat<Scalar>> U;      // per head G x D
  std::vector<Mat<Scalar>> alpha;  // per head G x G
  std::vector<Mat<Scalar>> Q, K, V;
};

template <typename Scalar>
struct RenormResult {
  Mat<Scalar> Z;
  Vec<Scalar> target_mass;  // sum_g Z
  Vec<Scalar> blended_mass;  // sum_g Zhat
  std::vector<bool> skipped;

  bool any_skipped() const {
    for (bool b : skipped)
      if (b) return true;
    return false;
  }
};

// Test hooks used by the low-rank oracle: inject windows or a coupling
// matrix, or switch off measurement normalization and renormalization.
template <typename Scalar>
struct PGLayerOverrides {
  std::vector<Mat<Scalar>> windows;
  std::vector<Mat<Scalar>> coupling;
  bool normalize_measure = true;
  bool renormalize = true;
};

template <typename Scalar>
struct PGLayerCache {
  Mat<Scalar> Z, xi;
  std::vector<Mat<Scalar>> desc;  // per head N x D
  ModalWindows<Scalar> windows;
  std::vector<Mat<Scalar>> S;     // per head N x D
  ModalTokens<Scalar> tokens;
  ModalCoupling<Scalar> coupling;
  Mat<Scalar> Ycat, Ztilde, Zhat;
  RenormResult<Scalar> renorm;
  Scalar lambda = 0;
  bool normalize_measure = true;
  bool renormalize = true;
  bool windows_overridden = false;
  bool coupling_overridden = false;
};

// xi_j = [z_j, w_j, mu_j, sigma_j], length G(2d+2).
template <typename Scalar>
Mat<Scalar> site_descriptor(const Mat<Scalar>& Z, const GaussianField<Scalar>& gf) {
  require_shape(Z.rows() == gf.size() && Z.cols() == gf.G, "site_descriptor: Z must be N x G");
  Mat<Scalar> xi(Z.rows(), gf.G * (2 * gf.d + 2));
  xi << Z, gf.w, gf.mu, gf.sigma;
  return xi;
}

template <typename Scalar>
ModalWindows<Scalar> build_windows(const Mat<Scalar>& Z, const GaussianField<Scalar>& gf,
                                   const PGAttentionParams<Scalar>& p, PGLayerCache<Scalar>* cache = nullptr) {
  const Mat<Scalar> xi = site_descriptor(Z, gf);
  require_shape(p.heads.front().W_desc.cols() == xi.cols(),
                "build_windows: descriptor length " + std::to_string(xi.cols()) + " does not match W_desc");
  ModalWindows<Scalar> win;
  win.P.reserve(p.heads.size());
  if (cache) {
    cache->xi = xi;
    cache->desc.clear();
  }
  for (const auto& hd : p.heads) {
    Mat<Scalar> proj = xi * hd.W_desc.transpose();
    win.P.push_back(nn::softmax_rows<Scalar>(proj * hd.W_p.transpose()));
    if (cache) cache->desc.push_back(std::move(proj));
  }
  return win;
}

// t_g = sum_j p[j,g] s_j / sum_j p[j,g] with s_j = W_z z_j. Modes whose window
// mass is below eps get a zero token and are flagged.
template <typename Scalar>
ModalTokens<Scalar> measure(const Mat<Scalar>& Z, const ModalWindows<Scalar>& win, const PGAttentionParams<Scalar>& p,
                            bool normalize = true, std::vector<Mat<Scalar>>* projected = nullptr) {
  ModalTokens<Scalar> tok;
  if (projected) projected->clear();
  for (Index h = 0; h < p.num_heads(); ++h) {
    const Mat<Scalar>& P = win.P[static_cast<std::size_t>(h)];
    require_shape(P.rows() == Z.rows(), "measure: window rows must equal site count");
    Mat<Scalar> S = Z * p.wz(h).transpose();
    Mat<Scalar> T = P.transpose() * S;
    Vec<Scalar> mass = P.colwise().sum().transpose();
    std::vector<bool> deg(static_cast<std::size_t>(P.cols()), false);
    if (normalize) {
      for (Index g = 0; g < T.rows(); ++g) {
        if (mass(g) < p.eps) {
          T.row(g).setZero();
          deg[static_cast<std::size_t>(g)] = true;
        } else {
          T.row(g) /= mass(g);
        }
      }
    }
    tok.T.push_back(std::move(T));
    tok.mass.push_back(std::move(mass));
    tok.degenerate.push_back(std::move(deg));
    if (projected) projected->push_back(std::move(S));
  }
  return tok;
}

// alpha = softmax(Q K^T / sqrt(D)), U = alpha V, per head.
template <typename Scalar>
ModalCoupling<Scalar> modal_attention(const ModalTokens<Scalar>& tok, const PGAttentionParams<Scalar>& p,
                                      const std::vector<Mat<Scalar>>* coupling_override = nullptr) {
  ModalCoupling<Scalar> out;
  const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(p.head_dim()));
  for (Index h = 0; h < p.num_heads(); ++h) {
    const auto& hd = p.heads[static_cast<std::size_t>(h)];
    const Mat<Scalar>& T = tok.T[static_cast<std::size_t>(h)];
    check_finite(T, "modal tokens (head " + std::to_string(h) + ")");
    Mat<Scalar> Q = T * hd.W_q.transpose();
    Mat<Scalar> K = T * hd.W_k.transpose();
    Mat<Scalar> V = T * hd.W_v.transpose();
    Mat<Scalar> alpha = (coupling_override && !coupling_override->empty())
                            ? (*coupling_override)[static_cast<std::size_t>(h)]
                            : nn::softmax_rows<Scalar>(scale * (Q * K.transpose()));
    out.U.push_back(alpha * V);
    out.alpha.push_back(std::move(alpha));
    out.Q.push_back(std::move(Q));
    out.K.push_back(std::move(K));
    out.V.push_back(std::move(V));
  }
  return out;
}

// y_j^(h) = sum_g P[h,j,g] U_g^(h); ztilde_j = W_out [y_j^(1); ...; y_j^(H)].
template <typename Scalar>
Mat<Scalar> scatter_readout(const ModalCoupling<Scalar>& coupled, const ModalWindows<Scalar>& win,
                            const PGAttentionParams<Scalar>& p, Mat<Scalar>* ycat_out = nullptr) {
  const Index n = win.P.front().rows();
  const Index D = p.head_dim();
  Mat<Scalar> ycat(n, p.num_heads() * D);
  for (Index h = 0; h < p.num_heads(); ++h)
    ycat.middleCols(h * D, D).noalias() = win.P[static_cast<std::size_t>(h)] * coupled.U[static_cast<std::size_t>(h)];
  Mat<Scalar> zt = ycat * p.W_out.transpose();
  if (ycat_out) *ycat_out = std::move(ycat);
  return zt;
}

template <typename Scalar>
RenormResult<Scalar> residual_renorm(const Mat<Scalar>& Z, const Mat<Scalar>& Ztilde, Scalar lambda, Scalar eps,
                                     RenormMode mode = RenormMode::Exact, bool renormalize = true) {
  require_shape(Z.rows() == Ztilde.rows() && Z.cols() == Ztilde.cols(), "residual_renorm: Z and Ztilde differ in shape");
  if (!(lambda >= Scalar(0) && lambda <= Scalar(1))) throw DomainError("residual_renorm: lambda outside [0,1]");
  RenormResult<Scalar> r;
  r.Z = (Scalar(1) - lambda) * Z + lambda * Ztilde;
  r.target_mass = Z.rowwise().sum();
  r.blended_mass = r.Z.rowwise().sum();
  r.skipped.assign(static_cast<std::size_t>(Z.rows()), false);
  if (!renormalize) return r;
  if (mode == RenormMode::Shift) {
    const Scalar inv_g = Scalar(1) / static_cast<Scalar>(Z.cols());
    r.Z.colwise() += (r.target_mass - r.blended_mass) * inv_g;
    return r;
  }
  for (Index j = 0; j < Z.rows(); ++j) {
    const Scalar s = r.blended_mass(j);
    if (std::abs(s) <= Scalar(10) * eps) {
      r.skipped[static_cast<std::size_t>(j)] = true;
      continue;
    }
    const Scalar denom = mode == RenormMode::Exact ? s : s + eps;
    r.Z.row(j) *= r.target_mass(j) / denom;
  }
  return r;
}

template <typename Scalar>
RenormResult<Scalar> residual_renorm(const Mat<Scalar>& Z, const Mat<Scalar>& Ztilde,
                                     const PGAttentionParams<Scalar>& p) {
  return residual_renorm(Z, Ztilde, p.mixing(), p.eps, p.renorm);
}

// build_windows -> measure -> modal_attention -> scatter_readout -> residual_renorm
template <typename Scalar>
Mat<Scalar> pg_layer(const Mat<Scalar>& Z, const GaussianField<Scalar>& gf, const PGAttentionParams<Scalar>& p,
                     PGLayerCache<Scalar>* cache = nullptr, const PGLayerOverrides<Scalar>* ov = nullptr) {
  p.validate();
  require_shape(Z.cols() == p.gaussians(), "pg_layer: Z has " + std::to_string(Z.cols()) + " columns, layer expects " +
                                               std::to_string(p.gaussians()));
  PGLayerCache<Scalar> local;
  PGLayerCache<Scalar>& c = cache ? *cache : local;
  c.Z = Z;
  c.normalize_measure = ov ? ov->normalize_measure : true;
  c.renormalize = ov ? ov->renormalize : true;
  c.windows_overridden = ov && !ov->windows.empty();
  c.coupling_overridden = ov && !ov->coupling.empty();

  if (c.windows_overridden) {
    c.windows.P = ov->windows;
  } else {
    c.windows = build_windows(Z, gf, p, &c);
  }
  c.tokens = measure(Z, c.windows, p, c.normalize_measure, &c.S);
  c.coupling = modal_attention(c.tokens, p, c.coupling_overridden ? &ov->coupling : nullptr);
  c.Ztilde = scatter_readout(c.coupling, c.windows, p, &c.Ycat);
  check_finite(c.Ztilde, "PG scatter readout");
  c.lambda = p.mixing();
  c.renorm = residual_renorm(Z, c.Ztilde, c.lambda, p.eps, p.renorm, c.renormalize);
  c.Zhat = (Scalar(1) - c.lambda) * Z + c.lambda * c.Ztilde;
  check_finite(c.renorm.Z, "PG residual renormalization");
  return c.renorm.Z;
}

template <typename Scalar>
struct PGLayerInputGrad {
  Mat<Scalar> dZ;
  GaussianField<Scalar> dgf;
};

// Reverse pass of pg_layer. Parameter gradients accumulate into `grad`.
template <typename Scalar>
PGLayerInputGrad<Scalar> pg_layer_backward(const PGLayerCache<Scalar>& c, const PGAttentionParams<Scalar>& p,
                                           const GaussianField<Scalar>& gf, const Mat<Scalar>& dout,
                                           PGAttentionParams<Scalar>& grad) {
  const Index n = c.Z.rows(), G = c.Z.cols(), D = p.head_dim();
  PGLayerInputGrad<Scalar> in;
  in.dZ = Mat<Scalar>::Zero(n, G);
  in.dgf = GaussianField<Scalar>::zeros(n, gf.G, gf.d);

  // renormalization
  Mat<Scalar> dZhat = dout;
  if (c.renormalize && p.renorm == RenormMode::Shift) {
    const Vec<Scalar> mean_d = dout.rowwise().mean();
    dZhat.colwise() -= mean_d;
    in.dZ.colwise() += mean_d;
  } else if (c.renormalize) {
    for (Index j = 0; j < n; ++j) {
      if (c.renorm.skipped[static_cast<std::size_t>(j)]) continue;
      const Scalar s = c.renorm.blended_mass(j);
      const Scalar denom = p.renorm == RenormMode::Exact ? s : s + p.eps;
      const Scalar r = c.renorm.target_mass(j);
      const Scalar inner = dout.row(j).dot(c.Zhat.row(j));
      dZhat.row(j) = (r / denom) * dout.row(j);
      dZhat.row(j).array() -= r / (denom * denom) * inner;
      in.dZ.row(j).array() += inner / denom;
    }
  }

  // residual blend
  in.dZ += (Scalar(1) - c.lambda) * dZhat;
  const Mat<Scalar> dZt = c.lambda * dZhat;
  if (p.learnable_lambda()) {
    const Scalar dl = dZhat.cwiseProduct(c.Ztilde - c.Z).sum();
    grad.lambda_logit(0, 0) += dl * c.lambda * (Scalar(1) - c.lambda);
  }

  // readout
  grad.W_out.noalias() += dZt.transpose() * c.Ycat;
  const Mat<Scalar> dYcat = dZt * p.W_out;

  const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(D));
  Mat<Scalar> dxi;
  if (!c.windows_overridden) dxi = Mat<Scalar>::Zero(n, c.xi.cols());

  for (Index h = 0; h < p.num_heads(); ++h) {
    const auto hs = static_cast<std::size_t>(h);
    const auto& hd = p.heads[hs];
    auto& gh = grad.heads[hs];
    const Mat<Scalar>& P = c.windows.P[hs];
    const Mat<Scalar> dY = dYcat.middleCols(h * D, D);

    // scatter
    Mat<Scalar> dP = dY * c.coupling.U[hs].transpose();
    const Mat<Scalar> dU = P.transpose() * dY;

    // coupling
    const Mat<Scalar>& A = c.coupling.alpha[hs];
    const Mat<Scalar> dV = A.transpose() * dU;
    Mat<Scalar> dT = dV * hd.W_v;
    gh.W_v.noalias() += dV.transpose() * c.tokens.T[hs];
    if (!c.coupling_overridden) {
      const Mat<Scalar> dA = dU * c.coupling.V[hs].transpose();
      const Mat<Scalar> dE = scale * nn::softmax_rows_backward<Scalar>(dA, A);
      const Mat<Scalar> dQ = dE * c.coupling.K[hs];
      const Mat<Scalar> dK = dE.transpose() * c.coupling.Q[hs];
      gh.W_q.noalias() += dQ.transpose() * c.tokens.T[hs];
      gh.W_k.noalias() += dK.transpose() * c.tokens.T[hs];
      dT.noalias() += dQ * hd.W_q;
      dT.noalias() += dK * hd.W_k;
    }

    // measurement
    const Mat<Scalar>& S = c.S[hs];
    Mat<Scalar> dnum = dT;
    if (c.normalize_measure) {
      const Vec<Scalar>& mass = c.tokens.mass[hs];
      Vec<Scalar> dmass = Vec<Scalar>::Zero(G);
      for (Index g = 0; g < G; ++g) {
        if (c.tokens.degenerate[hs][static_cast<std::size_t>(g)]) {
          dnum.row(g).setZero();
          continue;
        }
        dnum.row(g) = dT.row(g) / mass(g);
        dmass(g) = -dT.row(g).dot(c.tokens.T[hs].row(g)) / mass(g);
      }
      dP.rowwise() += dmass.transpose();
    }
    dP.noalias() += S * dnum.transpose();
    const Mat<Scalar> dS = P * dnum;
    const Mat<Scalar>& Wz = p.wz(h);
    Mat<Scalar>& gWz = grad.wz(h);
    gWz.noalias() += dS.transpose() * c.Z;
    in.dZ.noalias() += dS * Wz;

    // windows
    if (!c.windows_overridden) {
      const Mat<Scalar> dL = nn::softmax_rows_backward<Scalar>(dP, P);
      gh.W_p.noalias() += dL.transpose() * c.desc[hs];
      const Mat<Scalar> ddesc = dL * hd.W_p;
      gh.W_desc.noalias() += ddesc.transpose() * c.xi;
      dxi.noalias() += ddesc * hd.W_desc;
    }
  }

  if (!c.windows_overridden) {
    const Index gd = gf.G * gf.d;
    in.dZ += dxi.leftCols(G);
    in.dgf.w += dxi.middleCols(G, G);
    in.dgf.mu += dxi.middleCols(2 * G, gd);
    in.dgf.sigma += dxi.middleCols(2 * G + gd, gd);
  }
  return in;
}

// Dense evaluation of A K A^T (Z W_z^T) W_out^T.
template <typename Scalar>
Mat<Scalar> lowrank_reference(const Mat<Scalar>& Z, const Mat<Scalar>& A, const Mat<Scalar>& K, const Mat<Scalar>& Wz,
                              const Mat<Scalar>& Wout) {
  require_shape(A.rows() == Z.rows() && K.rows() == A.cols() && K.cols() == A.cols(), "lowrank_reference: shape mismatch");
  return A * (K * (A.transpose() * (Z * Wz.transpose()))) * Wout.transpose();
}

}  // namespace gpo
