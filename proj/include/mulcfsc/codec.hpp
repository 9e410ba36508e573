#pragma once

// Per-user semantic codec with CSI fusion and ratio-controlled attention
// masking.
//
// Images are cut into p x p patches and embedded as tokens.  The CSI matrix is
// embedded by a small dense net and appended to the token stream as one extra
// token that every patch can attend to.  Each attention block adds
// log(mask + floor) to its logits, where the mask comes from mask_map(): patch
// tokens whose score ranks in the lowest `m` fraction are pushed towards zero
// weight.  The CSI token is never masked.

#include <cmath>
#include <string>
#include <vector>

#include "mulcfsc/complex.hpp"
#include "mulcfsc/cvae.hpp"
#include "mulcfsc/layers.hpp"

namespace mulcfsc::codec {

struct CodecConfig {
  std::size_t image_size = 32;
  std::size_t patch = 4;
  std::size_t width = 16;
  std::size_t blocks = 2;
  std::size_t ffn = 32;
  std::size_t csi_hidden = 32;
  std::size_t cvae_latent = 8;
  std::size_t cvae_hidden = 32;
  std::size_t codeword_length = 184;
  std::size_t n_t = 2;
  std::size_t n_r = 2;
  double tau = 0.1;
  double rank_smoothing = 0.05;
  double mask_floor = 1e-6;
  // Decoder-side switches; encoders always fuse CSI and mask.
  bool csi_fusion = true;
  bool masking = true;

  std::size_t patches_per_side() const { return image_size / patch; }
  std::size_t tokens() const { return patches_per_side() * patches_per_side(); }
  std::size_t patch_dim() const { return patch * patch * 3; }
  std::size_t grid_width() const { return codeword_length / (2 * n_t); }
  std::size_t received_reals() const { return 2 * n_r * grid_width(); }
  std::size_t estimate_reals() const { return 2 * n_t * grid_width(); }
  std::size_t csi_reals() const { return 2 * n_r * n_t; }

  void validate() const {
    if (patch == 0 || image_size % patch != 0) {
      throw std::invalid_argument("codec: image_size must be a multiple of patch");
    }
    if (width == 0 || blocks == 0 || ffn == 0) throw std::invalid_argument("codec: zero-sized layer");
    if (codeword_length == 0 || codeword_length % (2 * n_t) != 0) {
      throw std::invalid_argument("codec: codeword_length must be a positive multiple of 2*n_t");
    }
    if (!(tau > 0) || !(rank_smoothing > 0)) {
      throw std::invalid_argument("codec: tau and rank_smoothing must be > 0");
    }
  }
};

// [B, H, W, 3] -> [B, (H/p)(W/p), p*p*3], patches row-major.
inline std::vector<std::size_t> patch_index(std::size_t batch, std::size_t side, std::size_t p) {
  const std::size_t g = side / p;
  std::vector<std::size_t> idx;
  idx.reserve(batch * side * side * 3);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t py = 0; py < g; ++py)
      for (std::size_t px = 0; px < g; ++px)
        for (std::size_t y = 0; y < p; ++y)
          for (std::size_t x = 0; x < p; ++x)
            for (std::size_t c = 0; c < 3; ++c)
              idx.push_back(((b * side + py * p + y) * side + px * p + x) * 3 + c);
  return idx;
}

template <class T>
Tensor<T> patchify(const Tensor<T>& images, std::size_t p) {
  if (images.rank() != 4 || images.dim(3) != 3 || images.dim(1) != images.dim(2) ||
      images.dim(1) % p != 0) {
    throw ShapeError("patchify: expected [B, S, S, 3] with S divisible by patch, got " +
                     shape_str(images.shape()));
  }
  const std::size_t b = images.dim(0), side = images.dim(1), g = side / p;
  return ops::take(images, patch_index(b, side, p), {b, g * g, p * p * 3});
}

template <class T>
Tensor<T> unpatchify(const Tensor<T>& patches, std::size_t side, std::size_t p) {
  const std::size_t b = patches.dim(0), g = side / p;
  if (patches.rank() != 3 || patches.dim(1) != g * g || patches.dim(2) != p * p * 3) {
    throw ShapeError("unpatchify: unexpected patch tensor " + shape_str(patches.shape()));
  }
  auto fwd = patch_index(b, side, p);
  std::vector<std::size_t> inv(fwd.size());
  for (std::size_t i = 0; i < fwd.size(); ++i) inv[fwd[i]] = i;
  return ops::take(patches, std::move(inv), {b, side, side, 3});
}

// Normalized soft rank of each entry along the last axis, in (0, 1).
// Scores are standardized per row first, so the result is invariant under
// positive rescaling; `smoothing` is the sigmoid width in standardized units.
template <class T>
Tensor<T> rank_quantile(const Tensor<T>& scores, double smoothing) {
  using namespace ops;
  if (scores.rank() != 2) throw ShapeError("rank_quantile: expected [B, n] scores");
  const std::size_t b = scores.dim(0), n = scores.dim(1);
  auto centered = sub(scores, mean_axis(scores, 1));
  auto spread = sqrt(add_scalar(mean_axis(square(centered), 1), T(1e-12)));
  auto z = div(centered, spread);
  auto diff = sub(reshape(z, {b, n, 1}), reshape(z, {b, 1, n}));
  auto soft = sigmoid(scale(diff, static_cast<T>(1.0 / smoothing)));
  return scale(sum_axis(soft, 2, false), T(1) / static_cast<T>(n));
}

// Soft keep-weights: weight_e = sigmoid((rank_quantile(score_e) - m) / tau).
// `ratio` is a scalar or a [B] / [B, 1] tensor of per-row mask ratios.
template <class T>
Tensor<T> mask_map(const Tensor<T>& scores, const Tensor<T>& ratio, double tau, double smoothing) {
  using namespace ops;
  auto q = rank_quantile(scores, smoothing);
  Tensor<T> m = ratio;
  if (ratio.rank() == 1) m = reshape(ratio, {ratio.dim(0), 1});
  for (T v : m.data()) {
    if (v < T(0) || v > T(1)) throw std::invalid_argument("mask_map: ratio outside [0, 1]");
  }
  return sigmoid(scale(sub(q, m), static_cast<T>(1.0 / tau)));
}

// softmax(q k^T / sqrt(d) + log(mask + floor)).  `mask` is either the full
// [B, n_q, n_k] map or a per-key [B, 1, n_k] map; an undefined mask gives
// plain attention.
template <class T>
Tensor<T> attention_weights(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& mask,
                            double floor) {
  using namespace ops;
  if (q.rank() != 3 || k.rank() != 3 || q.dim(0) != k.dim(0) || q.dim(2) != k.dim(2)) {
    throw ShapeError("attention: q " + shape_str(q.shape()) + " and k " + shape_str(k.shape()) +
                     " are incompatible");
  }
  auto logits = scale(matmul(q, transpose(k)),
                      static_cast<T>(1.0 / std::sqrt(static_cast<double>(q.dim(2)))));
  if (mask.defined()) {
    if (mask.rank() != 3 || mask.dim(0) != q.dim(0) || mask.dim(2) != k.dim(1) ||
        (mask.dim(1) != 1 && mask.dim(1) != q.dim(1))) {
      throw ShapeError("attention: mask " + shape_str(mask.shape()) + " not aligned with logits");
    }
    logits = add(logits, log(add_scalar(mask, static_cast<T>(floor))));
  }
  return softmax(logits);
}

template <class T>
Tensor<T> masked_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                           const Tensor<T>& mask, double floor) {
  if (v.rank() != 3 || v.dim(1) != k.dim(1)) throw ShapeError("attention: v does not match k");
  return ops::matmul(attention_weights(q, k, mask, floor), v);
}

template <class T>
struct AttentionBlock {
  Dense<T> wq, wk, wv, wo, ff1, ff2;

  AttentionBlock() = default;
  AttentionBlock(ParamSet<T>& ps, const std::string& name, std::size_t d, std::size_t ffn, Rng& rng)
      : wq(ps, name + ".q", d, d, rng),
        wk(ps, name + ".k", d, d, rng),
        wv(ps, name + ".v", d, d, rng),
        wo(ps, name + ".o", d, d, rng, T(0.5)),
        ff1(ps, name + ".ff1", d, ffn, rng),
        ff2(ps, name + ".ff2", ffn, d, rng, T(0.5)) {}

  Tensor<T> operator()(const Tensor<T>& x, const Tensor<T>& mask, double floor) const {
    using namespace ops;
    auto h = add(x, wo(masked_attention(wq(x), wk(x), wv(x), mask, floor)));
    return add(h, ff2(tanh(ff1(h))));
  }
};

// Flattened re/im of H through a two-layer tanh net.
template <class T>
struct CsiEmbedder {
  Dense<T> l1, l2;

  CsiEmbedder() = default;
  CsiEmbedder(ParamSet<T>& ps, const std::string& name, std::size_t in, std::size_t hidden,
              std::size_t out, Rng& rng)
      : l1(ps, name + ".l1", in, hidden, rng), l2(ps, name + ".l2", hidden, out, rng) {}

  Tensor<T> operator()(const ComplexTensor<T>& h) const {
    return l2(ops::tanh(l1(cops::interleave(h))));
  }
};

// Builds the per-key [B, 1, n + 1] mask (CSI token always kept) from patch
// scores, or an undefined tensor when masking is off.
template <class T>
Tensor<T> token_mask(const Tensor<T>& scores, const Tensor<T>& ratio, const CodecConfig& cfg,
                     bool with_csi_token) {
  auto w = mask_map(scores, ratio, cfg.tau, cfg.rank_smoothing);
  const std::size_t b = scores.dim(0), n = scores.dim(1);
  if (with_csi_token) {
    w = ops::concat<T>({w, Tensor<T>::full({b, 1}, T(1))}, 1);
    return ops::reshape(w, {b, 1, n + 1});
  }
  return ops::reshape(w, {b, 1, n});
}

template <class T>
Tensor<T> append_token(const Tensor<T>& tokens, const Tensor<T>& extra) {
  const std::size_t b = tokens.dim(0), d = tokens.dim(2);
  return ops::concat<T>({tokens, ops::reshape(extra, {b, 1, d})}, 1);
}

// Conditional VAE over pooled patch features (observation) given the CSI
// embedding (condition).  Its latent mean drives the per-token mask scores.
template <class T>
struct MaskCvae {
  GaussianHead<T> posterior;
  GaussianHead<T> prior;
  Dense<T> recon1, recon2;
  Dense<T> score_proj;

  struct Output {
    Tensor<T> scores;  // [B, n]
    Tensor<T> loss;    // scalar: reconstruction + divergence term
    Gaussian<T> post;
    Gaussian<T> prior;
  };

  MaskCvae() = default;
  MaskCvae(ParamSet<T>& ps, const std::string& name, const CodecConfig& c, Rng& rng)
      : posterior(ps, name + ".posterior", 2 * c.width, c.cvae_hidden, c.cvae_latent, rng),
        prior(ps, name + ".prior", c.width, c.cvae_hidden, c.cvae_latent, rng),
        recon1(ps, name + ".recon1", c.cvae_latent + c.width, c.cvae_hidden, rng),
        recon2(ps, name + ".recon2", c.cvae_hidden, c.width, rng),
        score_proj(ps, name + ".score", c.cvae_latent, c.width, rng) {}

  // features: [B, n, d] patch tokens; csi_emb: [B, d].
  Output operator()(const Tensor<T>& features, const Tensor<T>& csi_emb) const {
    using namespace ops;
    const std::size_t b = features.dim(0), d = features.dim(2);
    auto obs = mean_axis(features, 1, false);
    Output out;
    out.post = posterior(concat<T>({obs, csi_emb}, 1));
    out.prior = prior(csi_emb);
    // Posterior mean: encoding stays a deterministic function of its inputs.
    const auto& z = out.post.mu;
    auto obs_hat = recon2(tanh(recon1(concat<T>({z, csi_emb}, 1))));
    out.loss = add(mean_row_sse(obs_hat, obs), kl_reg(out.prior, out.post));
    auto dir = reshape(score_proj(z), {b, d, 1});
    out.scores = reshape(matmul(features, dir), {b, features.dim(1)});
    return out;
  }
};

template <class T>
class Encoder {
 public:
  struct Output {
    Tensor<T> codeword;  // [B, C_L]
    Tensor<T> lc;        // scalar mask-CVAE loss
    Tensor<T> scores;    // [B, n]
  };

  Encoder(const CodecConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg.validate();
    const std::size_t d = cfg.width;
    embed_ = Dense<T>(ps_, "patch_embed", cfg.patch_dim(), d, rng);
    pos_ = ps_.uniform("pos", {cfg.tokens(), d}, T(0.1), rng);
    csi_ = CsiEmbedder<T>(ps_, "csi", cfg.csi_reals(), cfg.csi_hidden, d, rng);
    cvae_ = MaskCvae<T>(ps_, "mask_cvae", cfg, rng);
    for (std::size_t i = 0; i < cfg.blocks; ++i) {
      blocks_.emplace_back(ps_, "block" + std::to_string(i), d, cfg.ffn, rng);
    }
    out_ = Dense<T>(ps_, "project", cfg.tokens() * d, cfg.codeword_length, rng);
  }

  const CodecConfig& config() const { return cfg_; }
  ParamSet<T>& params() { return ps_; }
  const ParamSet<T>& params() const { return ps_; }

  Tensor<T> embed_csi(const ComplexTensor<T>& h) const { return csi_(h); }

  typename MaskCvae<T>::Output mask_cvae(const Tensor<T>& features, const Tensor<T>& csi_emb) const {
    return cvae_(features, csi_emb);
  }

  // images: [B, S, S, 3] in [0, 1]; h: [B, n_r, n_t]; m_t: encoder mask ratio.
  Output encode(const Tensor<T>& images, const ComplexTensor<T>& h, T m_t) const {
    using namespace ops;
    if (images.rank() != 4 || images.dim(1) != cfg_.image_size) {
      throw ShapeError("encode: images " + shape_str(images.shape()) + " do not match image_size " +
                       std::to_string(cfg_.image_size));
    }
    if (h.re.dim(0) != images.dim(0)) throw ShapeError("encode: CSI batch differs from image batch");
    const std::size_t b = images.dim(0);
    auto tokens = add(embed_(patchify(images, cfg_.patch)), pos_);
    auto csi = csi_(h);
    auto cv = cvae_(tokens, csi);
    auto mask = token_mask(cv.scores, Tensor<T>::scalar(m_t), cfg_, true);
    auto x = append_token(tokens, csi);
    for (const auto& blk : blocks_) x = blk(x, mask, cfg_.mask_floor);
    x = slice(x, 1, 0, cfg_.tokens());
    auto cw = out_(reshape(x, {b, cfg_.tokens() * cfg_.width}));
    if (cw.dim(1) != cfg_.codeword_length) throw ShapeError("encode: codeword length mismatch");
    return {cw, cv.loss, cv.scores};
  }

 private:
  CodecConfig cfg_;
  ParamSet<T> ps_;
  Dense<T> embed_;
  Tensor<T> pos_;
  CsiEmbedder<T> csi_;
  MaskCvae<T> cvae_;
  std::vector<AttentionBlock<T>> blocks_;
  Dense<T> out_;
};

template <class T>
class Decoder {
 public:
  Decoder(const CodecConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg.validate();
    const std::size_t d = cfg.width;
    in_ = Dense<T>(ps_, "token_embed", cfg.estimate_reals(), cfg.tokens() * d, rng);
    pos_ = ps_.uniform("pos", {cfg.tokens(), d}, T(0.1), rng);
    if (cfg.csi_fusion) csi_ = CsiEmbedder<T>(ps_, "csi", cfg.csi_reals(), cfg.csi_hidden, d, rng);
    if (cfg.masking) score_ = Dense<T>(ps_, "score", d, 1, rng);
    for (std::size_t i = 0; i < cfg.blocks; ++i) {
      blocks_.emplace_back(ps_, "block" + std::to_string(i), d, cfg.ffn, rng);
    }
    out_ = Dense<T>(ps_, "image_head", d, cfg.patch_dim(), rng);
  }

  const CodecConfig& config() const { return cfg_; }
  ParamSet<T>& params() { return ps_; }
  const ParamSet<T>& params() const { return ps_; }

  // y: [B, n_t, W] equalized symbol estimate; h: [B, n_r, n_t]; m_star: [B]
  // mask ratios (ignored when masking is off).  Returns [B, S, S, 3] in (0, 1).
  Tensor<T> decode(const ComplexTensor<T>& y, const ComplexTensor<T>& h, const Tensor<T>& m_star) const {
    using namespace ops;
    y.check();
    if (y.re.rank() != 3 || y.re.dim(1) != cfg_.n_t || y.re.dim(2) != cfg_.grid_width()) {
      throw ShapeError("decode: symbol estimate " + shape_str(y.shape()) + " expected [B, " +
                       std::to_string(cfg_.n_t) + ", " + std::to_string(cfg_.grid_width()) + "]");
    }
    const std::size_t b = y.re.dim(0), n = cfg_.tokens(), d = cfg_.width;
    auto tokens = add(reshape(in_(cops::interleave(y)), {b, n, d}), pos_);
    Tensor<T> mask;
    if (cfg_.masking) {
      auto scores = reshape(score_(tokens), {b, n});
      mask = token_mask(scores, m_star, cfg_, cfg_.csi_fusion);
    }
    auto x = tokens;
    if (cfg_.csi_fusion) {
      if (h.re.dim(0) != b) throw ShapeError("decode: CSI batch differs from grid batch");
      x = append_token(x, csi_(h));
    }
    for (const auto& blk : blocks_) x = blk(x, mask, cfg_.mask_floor);
    if (cfg_.csi_fusion) x = slice(x, 1, 0, n);
    return unpatchify(sigmoid(out_(x)), cfg_.image_size, cfg_.patch);
  }

 private:
  CodecConfig cfg_;
  ParamSet<T> ps_;
  Dense<T> in_;
  Tensor<T> pos_;
  CsiEmbedder<T> csi_;
  Dense<T> score_;
  std::vector<AttentionBlock<T>> blocks_;
  Dense<T> out_;
};

// Single decoder trunk producing both users' images from the two per-user
// LMMSE estimates of the superposed grid (no cancellation, no mask ratios).
// Token width and block count match one Decoder; both users' CSI enter as
// tokens.
template <class T>
class JointDecoder {
 public:
  JointDecoder(const CodecConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg.validate();
    const std::size_t d = cfg.width;
    in_ = Dense<T>(ps_, "token_embed", 2 * cfg.estimate_reals(), cfg.tokens() * d, rng);
    pos_ = ps_.uniform("pos", {cfg.tokens(), d}, T(0.1), rng);
    csi1_ = CsiEmbedder<T>(ps_, "csi1", cfg.csi_reals(), cfg.csi_hidden, d, rng);
    csi2_ = CsiEmbedder<T>(ps_, "csi2", cfg.csi_reals(), cfg.csi_hidden, d, rng);
    for (std::size_t i = 0; i < cfg.blocks; ++i) {
      blocks_.emplace_back(ps_, "block" + std::to_string(i), d, cfg.ffn, rng);
    }
    head1_ = Dense<T>(ps_, "image_head1", d, cfg.patch_dim(), rng);
    head2_ = Dense<T>(ps_, "image_head2", d, cfg.patch_dim(), rng);
  }

  ParamSet<T>& params() { return ps_; }
  const ParamSet<T>& params() const { return ps_; }

  std::pair<Tensor<T>, Tensor<T>> decode(const ComplexTensor<T>& y1, const ComplexTensor<T>& y2,
                                         const ComplexTensor<T>& h1, const ComplexTensor<T>& h2) const {
    using namespace ops;
    y1.check();
    y2.check();
    const Shape want{y1.re.dim(0), cfg_.n_t, cfg_.grid_width()};
    if (y1.re.rank() != 3 || y1.shape() != want || y2.shape() != want) {
      throw ShapeError("joint_decode: symbol estimates " + shape_str(y1.shape()) + ", " +
                       shape_str(y2.shape()) + " expected " + shape_str(want));
    }
    if (h1.re.dim(0) != want[0] || h2.re.dim(0) != want[0]) {
      throw ShapeError("joint_decode: CSI batch differs from grid batch");
    }
    const std::size_t b = want[0], n = cfg_.tokens(), d = cfg_.width;
    auto both = concat<T>({cops::interleave(y1), cops::interleave(y2)}, 1);
    auto x = add(reshape(in_(both), {b, n, d}), pos_);
    x = append_token(append_token(x, csi1_(h1)), csi2_(h2));
    for (const auto& blk : blocks_) x = blk(x, Tensor<T>(), cfg_.mask_floor);
    x = slice(x, 1, 0, n);
    return {unpatchify(sigmoid(head1_(x)), cfg_.image_size, cfg_.patch),
            unpatchify(sigmoid(head2_(x)), cfg_.image_size, cfg_.patch)};
  }

 private:
  CodecConfig cfg_;
  ParamSet<T> ps_;
  Dense<T> in_;
  Tensor<T> pos_;
  CsiEmbedder<T> csi1_, csi2_;
  std::vector<AttentionBlock<T>> blocks_;
  Dense<T> head1_, head2_;
};

}  // namespace mulcfsc::codec
