#pragma once

// The four transmission schemes compared by the harness, behind one model
// type so training, evaluation and checkpointing treat them alike.
//
//   mu-lcfsc  NOMA superposition, C-SIC decoding with CMRG ratios
//   oma       same codecs, each user on its own orthogonal link
//   joint     NOMA superposition, one decoder emitting both images
//   lcfsc     NOMA + SIC without CMRG, CSI fusion or decoder masking

#include <memory>
#include <string>

#include "mulcfsc/channel.hpp"
#include "mulcfsc/cmrg.hpp"
#include "mulcfsc/codec.hpp"
#include "mulcfsc/sic.hpp"

namespace mulcfsc::schemes {

enum class SchemeKind { MuLcfsc, Oma, Joint, Lcfsc };

inline std::string scheme_name(SchemeKind k) {
  switch (k) {
    case SchemeKind::MuLcfsc: return "mu-lcfsc";
    case SchemeKind::Oma: return "oma";
    case SchemeKind::Joint: return "joint";
    case SchemeKind::Lcfsc: return "lcfsc";
  }
  return "?";
}

inline SchemeKind parse_scheme(const std::string& s) {
  for (auto k : {SchemeKind::MuLcfsc, SchemeKind::Oma, SchemeKind::Joint, SchemeKind::Lcfsc})
    if (scheme_name(k) == s) return k;
  throw std::invalid_argument("unknown scheme '" + s + "' (expected mu-lcfsc, oma, joint or lcfsc)");
}

struct ModelConfig {
  codec::CodecConfig codec;
  cmrg::MaskRatioGrid grid;
  std::size_t cmrg_hidden = 64;
  std::size_t cmrg_latent = 8;
  double m_t1 = 0.15;
  double m_t2 = 0.15;
  bool channel_free_cancel = false;
  bool tie_users = false;

  double m_default() const { return grid.midpoint(); }
};

template <class T>
struct Batch {
  Tensor<T> s1, s2;  // [B, S, S, 3]
  ComplexTensor<T> h1, h2;

  std::size_t size() const { return s1.dim(0); }
};

template <class T>
struct Forward {
  Tensor<T> s1_hat, s2_hat;
  Tensor<T> m1, m2;  // [B] decoder ratios actually used; undefined for joint
  Tensor<T> lc;      // encoder mask-CVAE losses, L_c1 + L_c2
  Tensor<T> l_rec, l_reg;  // CMRG terms, undefined without a CMRG
  double residual_power = 0.0;
};

template <class T>
class Model {
 public:
  Model(SchemeKind kind, const ModelConfig& cfg, std::uint64_t seed) : kind_(kind), cfg_(cfg) {
    cfg.codec.validate();
    auto rng = Rng::stream(seed, 0x1417);
    enc1_ = std::make_shared<codec::Encoder<T>>(cfg.codec, rng);
    enc2_ = cfg.tie_users ? enc1_ : std::make_shared<codec::Encoder<T>>(cfg.codec, rng);
    auto dcfg = cfg.codec;
    if (kind == SchemeKind::Lcfsc) {
      dcfg.csi_fusion = false;
      dcfg.masking = false;
    }
    if (kind == SchemeKind::Joint) {
      joint_ = std::make_shared<codec::JointDecoder<T>>(dcfg, rng);
    } else {
      dec1_ = std::make_shared<codec::Decoder<T>>(dcfg, rng);
      dec2_ = cfg.tie_users ? dec1_ : std::make_shared<codec::Decoder<T>>(dcfg, rng);
    }
    if (kind == SchemeKind::MuLcfsc) {
      cmrg::CmrgConfig gc{cfg.codec.received_reals(), cfg.cmrg_hidden, cfg.cmrg_latent, cfg.grid};
      cmrg_ = std::make_shared<cmrg::Cmrg<T>>(gc, rng);
      auto scratch = Rng(0);
      frozen_ = std::make_shared<codec::Encoder<T>>(cfg.codec, scratch);
      for (auto& t : frozen_->params().tensors()) t.set_requires_grad(false);
      refresh_snapshot();
    }
    params_.extend("enc1/", enc1_->params());
    if (!cfg.tie_users) params_.extend("enc2/", enc2_->params());
    if (joint_) params_.extend("joint/", joint_->params());
    if (dec1_) params_.extend("dec1/", dec1_->params());
    if (dec2_ && !cfg.tie_users) params_.extend("dec2/", dec2_->params());
    if (cmrg_) params_.extend("cmrg/", cmrg_->params());
    if (frozen_) frozen_params_.extend("frozen/", frozen_->params());
  }

  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) = default;

  SchemeKind kind() const { return kind_; }
  const ModelConfig& config() const { return cfg_; }
  bool has_cmrg() const { return static_cast<bool>(cmrg_); }
  std::size_t latent_dim() const { return cfg_.cmrg_latent; }

  // Trainable parameters (tied users appear once).
  ParamSet<T>& params() { return params_; }
  const ParamSet<T>& params() const { return params_; }
  // Frozen encoder snapshot; empty unless the scheme has a CMRG.
  ParamSet<T>& frozen_params() { return frozen_params_; }
  const ParamSet<T>& frozen_params() const { return frozen_params_; }

  void refresh_snapshot() {
    if (frozen_) frozen_->params().copy_values_from(enc1_->params());
  }

  const codec::Encoder<T>& encoder(int user) const { return user == 1 ? *enc1_ : *enc2_; }
  const codec::Decoder<T>& decoder(int user) const {
    if (!dec1_) throw std::logic_error("scheme " + scheme_name(kind_) + " has no per-user decoders");
    return user == 1 ? *dec1_ : *dec2_;
  }
  const codec::Encoder<T>& frozen_encoder() const {
    if (!frozen_) throw std::logic_error("scheme " + scheme_name(kind_) + " has no frozen snapshot");
    return *frozen_;
  }
  const cmrg::Cmrg<T>* generator() const { return cmrg_.get(); }

  // CMRG condition for a received grid, as decode_pair computes it.
  ComplexTensor<T> cmrg_condition(const ComplexTensor<T>& y, const ComplexTensor<T>& h1,
                                  const ComplexTensor<T>& h2, const channel::ChannelConfig& ch) const {
    NoGrad<T> off;
    auto provisional = decoder(1).decode(sic::strong_estimate(y, h1, h2, ch), h1,
                                         Tensor<T>::full({y.re.dim(0)}, T(cfg_.m_default())));
    return sic::condition(y, provisional, h1, frozen_encoder(), T(cfg_.m_t1), ch, cfg_.channel_free_cancel);
  }

  // One pass through encoders, channel and decoders.  `noise` supplies the
  // channel noise; `eps` is the CMRG latent noise (undefined: posterior mean).
  Forward<T> forward(const Batch<T>& batch, const channel::ChannelConfig& ch, Rng& noise,
                     const Tensor<T>& eps = Tensor<T>(),
                     cmrg::ArgmaxGrad mode = cmrg::ArgmaxGrad::StraightThrough) const {
    const std::size_t b = batch.size();
    if (batch.s2.shape() != batch.s1.shape() || batch.h1.re.dim(0) != b || batch.h2.re.dim(0) != b) {
      throw ShapeError("forward: inconsistent batch");
    }
    Forward<T> f;
    auto o1 = enc1_->encode(batch.s1, batch.h1, T(cfg_.m_t1));
    auto o2 = enc2_->encode(batch.s2, batch.h2, T(cfg_.m_t2));
    f.lc = ops::add(o1.lc, o2.lc);
    auto x1 = channel::to_symbols(o1.codeword, ch.n_t());
    auto x2 = channel::to_symbols(o2.codeword, ch.n_t());
    switch (kind_) {
      case SchemeKind::Oma: {
        auto y1 = channel::oma_transmit(x1.grid, batch.h1, ch, noise);
        auto y2 = channel::oma_transmit(x2.grid, batch.h2, ch, noise);
        f.m1 = f.m2 = Tensor<T>::full({b}, T(cfg_.m_default()));
        const double a = std::sqrt(ch.power() / 2.0);
        f.s1_hat = dec1_->decode(channel::lmmse(y1, batch.h1, a, ch.sigma2()), batch.h1, f.m1);
        f.s2_hat = dec2_->decode(channel::lmmse(y2, batch.h2, a, ch.sigma2()), batch.h2, f.m2);
        break;
      }
      case SchemeKind::Joint: {
        auto y = channel::mac_transmit(x1.grid, x2.grid, batch.h1, batch.h2, ch, noise);
        std::tie(f.s1_hat, f.s2_hat) = sic::joint_decode(y, batch.h1, batch.h2, *joint_, ch);
        break;
      }
      case SchemeKind::MuLcfsc:
      case SchemeKind::Lcfsc: {
        auto y = channel::mac_transmit(x1.grid, x2.grid, batch.h1, batch.h2, ch, noise);
        sic::SicOptions opt;
        opt.m_t1 = cfg_.m_t1;
        opt.m_default = cfg_.m_default();
        opt.use_cmrg = kind_ == SchemeKind::MuLcfsc;
        opt.channel_free_cancel = cfg_.channel_free_cancel;
        opt.argmax = mode;
        auto r = sic::decode_pair(y, batch.h1, batch.h2, *enc1_, frozen_ ? *frozen_ : *enc1_, *dec1_,
                                  *dec2_, cmrg_.get(), ch, opt, eps);
        f.s1_hat = r.s1_hat;
        f.s2_hat = r.s2_hat;
        f.m1 = r.m1;
        f.m2 = r.m2;
        f.l_rec = r.l_rec;
        f.l_reg = r.l_reg;
        f.residual_power = r.residual_power;
        break;
      }
    }
    return f;
  }

 private:
  SchemeKind kind_;
  ModelConfig cfg_;
  std::shared_ptr<codec::Encoder<T>> enc1_, enc2_, frozen_;
  std::shared_ptr<codec::Decoder<T>> dec1_, dec2_;
  std::shared_ptr<codec::JointDecoder<T>> joint_;
  std::shared_ptr<cmrg::Cmrg<T>> cmrg_;
  ParamSet<T> params_;
  ParamSet<T> frozen_params_;
};

}  // namespace mulcfsc::schemes
