#pragma once

// Cooperative successive interference cancellation.
//
// The strong user (larger power share) is decoded first from the superposed
// grid.  Its reconstruction is re-encoded, mapped through its own channel and
// subtracted, and the weak user is decoded from the residual.  Mask ratios for
// both decoders come from the CMRG, whose condition is a residual computed
// with a frozen encoder snapshot and a provisional strong-user decode.

#include <chrono>
#include <stdexcept>
#include <string>

#include "mulcfsc/channel.hpp"
#include "mulcfsc/cmrg.hpp"
#include "mulcfsc/codec.hpp"

namespace mulcfsc::sic {

class StageError : public std::runtime_error {
 public:
  StageError(const std::string& stage, const std::exception& e)
      : std::runtime_error("decode_pair[" + stage + "]: " + e.what()), stage_(stage) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

// y_s = y - sqrt(b1 P) H1 x1_hat, with x1_hat the re-encoded strong-user
// reconstruction.  The `channel_free` form subtracts sqrt(b2 P) x1_hat, with
// no channel matrix and the weak user's amplitude; it only type-checks when
// n_r == n_t and does not cancel the strong user.
template <class T>
ComplexTensor<T> cancel(const ComplexTensor<T>& y, const Tensor<T>& s1_hat,
                        const ComplexTensor<T>& h1, const codec::Encoder<T>& enc1, T m_t1,
                        const channel::ChannelConfig& cfg, bool channel_free = false) {
  auto x1 = channel::to_symbols(enc1.encode(s1_hat, h1, m_t1).codeword, cfg.n_t());
  if (x1.grid.shape() != Shape{y.re.dim(0), cfg.n_t(), y.re.dim(2)} || y.re.dim(1) != cfg.n_r()) {
    throw ShapeError("cancel: re-encoded grid " + shape_str(x1.grid.shape()) +
                     " does not match received grid " + shape_str(y.shape()));
  }
  if (channel_free) {
    if (cfg.n_t() != cfg.n_r()) throw ShapeError("cancel: channel-free form needs n_r == n_t");
    auto a = static_cast<T>(std::sqrt(cfg.beta2() * cfg.power()));
    return cops::sub(y, cops::scale(x1.grid, a));
  }
  auto a = static_cast<T>(std::sqrt(cfg.beta1() * cfg.power()));
  return cops::sub(y, cops::scale(cops::matmul(h1, x1.grid), a));
}

// CMRG condition: the same cancellation evaluated with the frozen snapshot,
// off the tape.
template <class T>
ComplexTensor<T> condition(const ComplexTensor<T>& y, const Tensor<T>& s1_hat,
                           const ComplexTensor<T>& h1, const codec::Encoder<T>& frozen_enc1, T m_t1,
                           const channel::ChannelConfig& cfg, bool channel_free = false) {
  NoGrad<T> off;
  auto r = cancel(ComplexTensor<T>{y.re.detach(), y.im.detach()}, s1_hat.detach(), h1, frozen_enc1,
                  m_t1, cfg, channel_free);
  return {r.re.detach(), r.im.detach()};
}

struct SicOptions {
  double m_t1 = 0.15;        // encoder-side mask ratio used when re-encoding
  double m_default = 0.2;    // provisional / fixed decoder ratio
  bool use_cmrg = true;
  bool channel_free_cancel = false;
  cmrg::ArgmaxGrad argmax = cmrg::ArgmaxGrad::StraightThrough;
};

template <class T>
struct SicOutput {
  Tensor<T> s1_hat;
  Tensor<T> s2_hat;
  Tensor<T> m1;  // [B]
  Tensor<T> m2;  // [B]
  ComplexTensor<T> y_s;
  // Populated when the CMRG runs.
  Tensor<T> l_rec;
  Tensor<T> l_reg;
  double residual_power = 0.0;  // mean ||y_s||^2 per batch item
  double stage_seconds[5] = {0, 0, 0, 0, 0};
};

// Per-user LMMSE front ends.  The strong user's filter treats the weak user as
// coloured interference; the weak user's filter sees only noise.
template <class T>
ComplexTensor<T> strong_estimate(const ComplexTensor<T>& y, const ComplexTensor<T>& h1,
                                 const ComplexTensor<T>& h2, const channel::ChannelConfig& cfg) {
  return channel::lmmse(y, h1, std::sqrt(cfg.beta1() * cfg.power()), cfg.sigma2(),
                        {{&h2, std::sqrt(cfg.beta2() * cfg.power())}});
}

template <class T>
ComplexTensor<T> weak_estimate(const ComplexTensor<T>& y_s, const ComplexTensor<T>& h2,
                               const channel::ChannelConfig& cfg) {
  return channel::lmmse(y_s, h2, std::sqrt(cfg.beta2() * cfg.power()), cfg.sigma2());
}

// Decoding stages: (i) provisional strong-user decode at the default ratio and
// frozen-snapshot cancellation -> condition; (ii) CMRG ratios; (iii) strong
// user; (iv) live cancellation; (v) weak user.  An undefined `eps` selects the
// posterior-mean latent.
template <class T>
SicOutput<T> decode_pair(const ComplexTensor<T>& y, const ComplexTensor<T>& h1,
                         const ComplexTensor<T>& h2, const codec::Encoder<T>& enc1,
                         const codec::Encoder<T>& frozen_enc1, const codec::Decoder<T>& dec1,
                         const codec::Decoder<T>& dec2, const cmrg::Cmrg<T>* gen,
                         const channel::ChannelConfig& cfg, const SicOptions& opt,
                         const Tensor<T>& eps = Tensor<T>()) {
  using clock = std::chrono::steady_clock;
  SicOutput<T> out;
  const std::size_t b = y.re.dim(0);
  const auto m_t1 = static_cast<T>(opt.m_t1);
  auto m_default = Tensor<T>::full({b}, static_cast<T>(opt.m_default));
  auto stage = [&](int idx, const char* name, auto&& fn) {
    auto t0 = clock::now();
    try {
      fn();
    } catch (const StageError&) {
      throw;
    } catch (const std::exception& e) {
      throw StageError(name, e);
    }
    out.stage_seconds[idx] = std::chrono::duration<double>(clock::now() - t0).count();
  };

  ComplexTensor<T> y_bar;
  const auto x1_est = strong_estimate(y, h1, h2, cfg);
  if (opt.use_cmrg) {
    if (!gen) throw std::invalid_argument("decode_pair: CMRG enabled but not provided");
    stage(0, "condition", [&] {
      NoGrad<T> off;
      auto provisional = dec1.decode(x1_est, h1, m_default);
      auto c = condition(y, provisional, h1, frozen_enc1, m_t1, cfg, opt.channel_free_cancel);
      y_bar = {ops::stop_gradient(c.re), ops::stop_gradient(c.im)};
    });
    stage(1, "cmrg", [&] {
      auto y_flat = cops::interleave(ComplexTensor<T>{ops::stop_gradient(y.re), ops::stop_gradient(y.im)});
      auto c = gen->generate(y_flat, cops::interleave(y_bar), eps, opt.argmax);
      out.m1 = c.m1;
      out.m2 = c.m2;
      out.l_rec = c.l_rec;
      out.l_reg = c.l_reg;
    });
  } else {
    out.m1 = m_default;
    out.m2 = m_default;
  }
  stage(2, "strong-user decode", [&] { out.s1_hat = dec1.decode(x1_est, h1, out.m1); });
  stage(3, "cancel", [&] { out.y_s = cancel(y, out.s1_hat, h1, enc1, m_t1, cfg, opt.channel_free_cancel); });
  stage(4, "weak-user decode", [&] { out.s2_hat = dec2.decode(weak_estimate(out.y_s, h2, cfg), h2, out.m2); });
  out.residual_power = static_cast<double>(cops::squared_norm(out.y_s)) / static_cast<double>(b);
  return out;
}

template <class T>
std::pair<Tensor<T>, Tensor<T>> joint_decode(const ComplexTensor<T>& y, const ComplexTensor<T>& h1,
                                             const ComplexTensor<T>& h2,
                                             const codec::JointDecoder<T>& joint,
                                             const channel::ChannelConfig& cfg) {
  const double a1 = std::sqrt(cfg.beta1() * cfg.power()), a2 = std::sqrt(cfg.beta2() * cfg.power());
  return joint.decode(channel::lmmse(y, h1, a1, cfg.sigma2(), {{&h2, a2}}),
                      channel::lmmse(y, h2, a2, cfg.sigma2(), {{&h1, a1}}), h1, h2);
}

// Genie check of the cancellation arithmetic: with s1_hat = s1 and the same
// encoder on both sides, returns ||y_s - (sqrt(b2 P) H2 x2 + z)|| / ||y||.
template <class T>
double genie_residual(const Tensor<T>& s1, const Tensor<T>& s2, const ComplexTensor<T>& h1,
                      const ComplexTensor<T>& h2, const codec::Encoder<T>& enc1,
                      const codec::Encoder<T>& enc2, T m_t1, T m_t2, const channel::ChannelConfig& cfg,
                      Rng& rng, bool channel_free = false) {
  NoGrad<T> off;
  auto x1 = channel::to_symbols(enc1.encode(s1, h1, m_t1).codeword, cfg.n_t());
  auto x2 = channel::to_symbols(enc2.encode(s2, h2, m_t2).codeword, cfg.n_t());
  auto z = channel::sample_noise<T>(rng, {s1.dim(0), cfg.n_r(), x1.width()}, cfg.sigma2());
  auto y = channel::mac_transmit(x1.grid, x2.grid, h1, h2, cfg, z);
  auto y_s = cancel(y, s1, h1, enc1, m_t1, cfg, channel_free);
  const auto a2 = static_cast<T>(std::sqrt(cfg.beta2() * cfg.power()));
  auto expect = cops::add(cops::scale(cops::matmul(h2, x2.grid), a2), z);
  double num = 0, den = 0;
  for (std::size_t i = 0; i < y.re.numel(); ++i) {
    const double dr = static_cast<double>(y_s.re.data()[i]) - static_cast<double>(expect.re.data()[i]);
    const double di = static_cast<double>(y_s.im.data()[i]) - static_cast<double>(expect.im.data()[i]);
    num += dr * dr + di * di;
    den += static_cast<double>(y.re.data()[i]) * y.re.data()[i] + static_cast<double>(y.im.data()[i]) * y.im.data()[i];
  }
  return std::sqrt(num / den);
}

}  // namespace mulcfsc::sic
