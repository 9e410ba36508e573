#pragma once

// Random finite-difference cases for every differentiable operation, shared
// by the unit tests (a few cases per op) and the acceptance gate (>= 100).
// Each case reduces the op output to a scalar with fixed random weights so
// every output element contributes.

#include <functional>
#include <string>
#include <vector>

#include "mulcfsc/mulcfsc.hpp"

namespace gradsuite {

using namespace mulcfsc;
using D = double;
using TD = Tensor<D>;

struct Case {
  std::function<TD()> fn;
  std::vector<TD> inputs;
  std::size_t max_coords = 32;
};

struct OpCase {
  std::string name;
  std::function<Case(Rng&)> make;
};

inline TD rnd(Rng& rng, Shape s, double lo = -1.0, double hi = 1.0) { return uniform_sample<D>(rng, std::move(s), lo, hi); }

inline TD away_from_zero(Rng& rng, Shape s) {
  auto t = rnd(rng, std::move(s), 0.5, 2.0);
  for (auto& v : t.mutable_data())
    if (rng.uniform() < 0.5) v = -v;
  return t;
}

// Smallest gap between the top two logits of any row.  Finite differences
// across an argmax switch are meaningless, so cases near a tie are redrawn.
inline double argmax_margin(const TD& logits) {
  const std::size_t k = logits.dim(1);
  double margin = 1e300;
  for (std::size_t i = 0; i < logits.dim(0); ++i) {
    std::vector<D> row(logits.values().begin() + i * k, logits.values().begin() + (i + 1) * k);
    std::partial_sort(row.begin(), row.begin() + 2, row.end(), std::greater<>());
    margin = std::min(margin, row[0] - row[1]);
  }
  return margin;
}

inline std::size_t dim(Rng& rng, std::size_t lo = 1, std::size_t hi = 4) { return lo + rng.below(hi - lo + 1); }

// sum(w * t) with w fixed for the case.
inline std::function<TD(const TD&)> projector(Rng& rng) {
  auto w = std::make_shared<TD>();
  auto seed = rng.next_u64();
  return [w, seed](const TD& t) {
    if (!w->defined() || w->shape() != t.shape()) {
      Rng r(seed);
      *w = uniform_sample<D>(r, t.shape(), -1.0, 1.0);
    }
    return ops::sum(ops::mul(t, *w));
  };
}

inline ComplexTensor<D> rnd_complex(Rng& rng, Shape s) { return {rnd(rng, s), rnd(rng, s)}; }

inline codec::CodecConfig tiny_codec() {
  codec::CodecConfig c;
  c.image_size = 8;
  c.patch = 4;
  c.width = 4;
  c.blocks = 1;
  c.ffn = 4;
  c.csi_hidden = 4;
  c.cvae_latent = 2;
  c.cvae_hidden = 4;
  c.codeword_length = 8;
  return c;
}

inline ComplexTensor<D> csi(Rng& rng, std::size_t b, std::size_t n_r = 2, std::size_t n_t = 2) {
  return stack<D>(channel::sample_csi_pool(rng, b, n_r, n_t));
}

template <class F>
OpCase unary_case(std::string name, F op, double lo = -2.0, double hi = 2.0) {
  return {name, [op, lo, hi](Rng& rng) {
            auto x = rnd(rng, {dim(rng), dim(rng, 1, 5)}, lo, hi);
            auto p = projector(rng);
            return Case{[=] { return p(op(x)); }, {x}};
          }};
}

// Broadcast-compatible operand shapes: same, row vector, column or scalar.
inline std::pair<Shape, Shape> broadcast_shapes(Rng& rng) {
  const std::size_t r = dim(rng), c = dim(rng);
  switch (rng.below(4)) {
    case 0: return {{r, c}, {r, c}};
    case 1: return {{r, c}, {c}};
    case 2: return {{r, c}, {r, 1}};
    default: return {{r, c}, {}};
  }
}

template <class F>
OpCase binary_case(std::string name, F op, bool nonzero_rhs = false) {
  return {name, [op, nonzero_rhs](Rng& rng) {
            auto [sa, sb] = broadcast_shapes(rng);
            if (rng.uniform() < 0.5) std::swap(sa, sb);
            auto a = rnd(rng, sa);
            auto b = nonzero_rhs ? away_from_zero(rng, sb) : rnd(rng, sb);
            auto p = projector(rng);
            return Case{[=] { return p(op(a, b)); }, {a, b}};
          }};
}

inline std::vector<OpCase> primitive_ops() {
  using namespace ops;
  std::vector<OpCase> v;
  v.push_back(binary_case("add", [](const TD& a, const TD& b) { return add(a, b); }));
  v.push_back(binary_case("sub", [](const TD& a, const TD& b) { return sub(a, b); }));
  v.push_back(binary_case("mul", [](const TD& a, const TD& b) { return mul(a, b); }));
  v.push_back(binary_case("div", [](const TD& a, const TD& b) { return div(a, b); }, true));
  v.push_back(unary_case("scale", [](const TD& x) { return scale(x, D(-1.7)); }));
  v.push_back(unary_case("add_scalar", [](const TD& x) { return add_scalar(x, D(0.3)); }));
  v.push_back(unary_case("neg", [](const TD& x) { return neg(x); }));
  v.push_back(unary_case("exp", [](const TD& x) { return ops::exp(x); }));
  v.push_back(unary_case("log", [](const TD& x) { return ops::log(x); }, 0.2, 3.0));
  v.push_back(unary_case("sigmoid", [](const TD& x) { return sigmoid(x); }, -4.0, 4.0));
  v.push_back(unary_case("tanh", [](const TD& x) { return ops::tanh(x); }));
  v.push_back(unary_case("square", [](const TD& x) { return square(x); }));
  v.push_back(unary_case("sqrt", [](const TD& x) { return ops::sqrt(x); }, 0.2, 3.0));
  v.push_back({"sum", [](Rng& rng) {
                 auto x = rnd(rng, {dim(rng), dim(rng), dim(rng)});
                 return Case{[=] { return scale(sum(x), D(0.7)); }, {x}};
               }});
  v.push_back({"mean", [](Rng& rng) {
                 auto x = rnd(rng, {dim(rng), dim(rng)});
                 return Case{[=] { return square(mean(x)); }, {x}};
               }});
  v.push_back({"sum_axis", [](Rng& rng) {
                 auto x = rnd(rng, {dim(rng), dim(rng), dim(rng)});
                 const auto axis = rng.below(3);
                 const bool keep = rng.uniform() < 0.5;
                 auto p = projector(rng);
                 return Case{[=] { return p(sum_axis(x, axis, keep)); }, {x}};
               }});
  v.push_back({"mean_axis", [](Rng& rng) {
                 auto x = rnd(rng, {dim(rng), dim(rng), dim(rng)});
                 const auto axis = rng.below(3);
                 const bool keep = rng.uniform() < 0.5;
                 auto p = projector(rng);
                 return Case{[=] { return p(mean_axis(x, axis, keep)); }, {x}};
               }});
  v.push_back({"softmax", [](Rng& rng) {
                 auto x = rnd(rng, {dim(rng), dim(rng, 2, 6)}, -3, 3);
                 auto p = projector(rng);
                 return Case{[=] { return p(softmax(x)); }, {x}};
               }});
  v.push_back({"matmul", [](Rng& rng) {
                 const std::size_t m = dim(rng), k = dim(rng), n = dim(rng);
                 TD a, b;
                 switch (rng.below(3)) {
                   case 0: a = rnd(rng, {m, k}), b = rnd(rng, {k, n}); break;
                   case 1: {
                     const std::size_t t = dim(rng, 1, 3);
                     a = rnd(rng, {t, m, k}), b = rnd(rng, {t, k, n});
                     break;
                   }
                   default: a = rnd(rng, {dim(rng, 1, 3), m, k}), b = rnd(rng, {k, n}); break;
                 }
                 auto p = projector(rng);
                 return Case{[=] { return p(matmul(a, b)); }, {a, b}};
               }});
  v.push_back({"take", [](Rng& rng) {
                 auto x = rnd(rng, {dim(rng), dim(rng)});
                 std::vector<std::size_t> idx(dim(rng, 1, 10));
                 for (auto& i : idx) i = rng.below(x.numel());
                 auto p = projector(rng);
                 return Case{[=] { return p(take(x, idx, {idx.size()})); }, {x}};
               }});
  v.push_back({"reshape", [](Rng& rng) {
                 const std::size_t a = dim(rng), b = dim(rng);
                 auto x = rnd(rng, {a, b});
                 auto p = projector(rng);
                 return Case{[=] { return p(reshape(x, {b, a})); }, {x}};
               }});
  v.push_back({"transpose", [](Rng& rng) {
                 auto x = rnd(rng, {dim(rng, 1, 3), dim(rng), dim(rng)});
                 auto p = projector(rng);
                 return Case{[=] { return p(transpose(x)); }, {x}};
               }});
  v.push_back({"slice", [](Rng& rng) {
                 auto x = rnd(rng, {dim(rng), dim(rng, 2, 5), dim(rng)});
                 const auto axis = rng.below(3);
                 const auto len = 1 + rng.below(x.dim(axis));
                 const auto start = rng.below(x.dim(axis) - len + 1);
                 auto p = projector(rng);
                 return Case{[=] { return p(slice(x, axis, start, len)); }, {x}};
               }});
  v.push_back({"concat", [](Rng& rng) {
                 const std::size_t r = dim(rng);
                 auto a = rnd(rng, {r, dim(rng)}), b = rnd(rng, {r, dim(rng)});
                 const std::size_t axis = 1;
                 auto p = projector(rng);
                 return Case{[=] { return p(concat<D>({a, b, a}, axis)); }, {a, b}};
               }});
  return v;
}

inline std::vector<OpCase> model_ops() {
  using namespace ops;
  std::vector<OpCase> v;
  v.push_back({"select_ratio", [](Rng& rng) {
                 const std::size_t b = dim(rng), k = 4;
                 auto r = rnd(rng, {b, k}, -2, 2), val = rnd(rng, {b, k}, -2, 2);
                 auto grid = cmrg::MaskRatioGrid::uniform(k, 0.0, 0.4);
                 auto p = projector(rng);
                 return Case{[=] {
                               return p(cmrg::select_ratio(grid, cmrg::SelectionVectors<D>{r, val},
                                                          cmrg::ArgmaxGrad::Exact));
                             },
                             {r, val}};
               }});
  v.push_back({"complex_matmul", [](Rng& rng) {
                 const std::size_t b = dim(rng, 1, 3), m = dim(rng), k = dim(rng), n = dim(rng);
                 auto a = rnd_complex(rng, {b, m, k}), c = rnd_complex(rng, {b, k, n});
                 auto p = projector(rng), q = projector(rng);
                 return Case{[=] {
                               auto o = cops::matmul(a, c);
                               return add(p(o.re), q(o.im));
                             },
                             {a.re, a.im, c.re, c.im}};
               }});
  v.push_back({"interleave", [](Rng& rng) {
                 auto a = rnd_complex(rng, {dim(rng), dim(rng), dim(rng)});
                 auto p = projector(rng);
                 return Case{[=] { return p(cops::interleave(a)); }, {a.re, a.im}};
               }});
  v.push_back({"to_symbols", [](Rng& rng) {
                 const std::size_t n_t = 2, b = dim(rng, 1, 3), c_l = 4 * dim(rng, 1, 3);
                 auto w = rnd(rng, {b, c_l});
                 auto p = projector(rng), q = projector(rng);
                 return Case{[=] {
                               auto g = channel::to_symbols(w, n_t).grid;
                               return add(p(g.re), q(g.im));
                             },
                             {w}};
               }});
  v.push_back({"mac_transmit", [](Rng& rng) {
                 const std::size_t b = dim(rng, 1, 3), w = dim(rng);
                 auto x1 = rnd_complex(rng, {b, 2, w}), x2 = rnd_complex(rng, {b, 2, w});
                 auto h1 = csi(rng, b), h2 = csi(rng, b);
                 channel::ChannelConfig ch;
                 auto z = channel::sample_noise<D>(rng, {b, 2, w}, ch.sigma2());
                 auto p = projector(rng), q = projector(rng);
                 return Case{[=] {
                               auto y = channel::mac_transmit(x1, x2, h1, h2, ch, z);
                               return add(p(y.re), q(y.im));
                             },
                             {x1.re, x1.im, x2.re, x2.im}};
               }});
  v.push_back({"lmmse", [](Rng& rng) {
                 const std::size_t b = dim(rng, 1, 3), w = dim(rng);
                 auto y = rnd_complex(rng, {b, 2, w});
                 auto h1 = csi(rng, b), h2 = csi(rng, b);
                 auto p = projector(rng), q = projector(rng);
                 return Case{[=] {
                               auto e = channel::lmmse(y, h1, 0.8, 0.2, {{&h2, 0.5}});
                               return add(p(e.re), q(e.im));
                             },
                             {y.re, y.im}};
               }});
  // Two-element rows standardize to +-1 whatever the scores, so n >= 3.
  v.push_back({"rank_quantile", [](Rng& rng) {
                 auto s = rnd(rng, {dim(rng), dim(rng, 3, 6)}, -2, 2);
                 auto p = projector(rng);
                 const double width = rng.uniform(0.2, 1.0);
                 return Case{[=] { return p(codec::rank_quantile(s, width)); }, {s}};
               }});
  v.push_back({"mask_map", [](Rng& rng) {
                 const std::size_t b = dim(rng);
                 auto s = rnd(rng, {b, dim(rng, 3, 6)}, -2, 2);
                 auto m = rnd(rng, {b}, 0.05, 0.6);
                 auto p = projector(rng);
                 const double tau = rng.uniform(0.1, 0.5), width = rng.uniform(0.2, 1.0);
                 return Case{[=] { return p(codec::mask_map(s, m, tau, width)); }, {s}};
               }});
  v.push_back({"masked_attention", [](Rng& rng) {
                 const std::size_t b = dim(rng, 1, 2), n = dim(rng, 2, 4), d = dim(rng, 1, 3);
                 auto q = rnd(rng, {b, n, d}), k = rnd(rng, {b, n, d}), val = rnd(rng, {b, n, d});
                 auto mask = rnd(rng, {b, 1, n}, 0.05, 1.0);
                 auto p = projector(rng);
                 return Case{[=] { return p(codec::masked_attention(q, k, val, mask, 1e-6)); },
                             {q, k, val, mask}};
               }});
  v.push_back({"kl_reg", [](Rng& rng) {
                 const std::size_t b = dim(rng), l = dim(rng, 1, 8);
                 Gaussian<D> f{rnd(rng, {b, l}), rnd(rng, {b, l})}, h{rnd(rng, {b, l}), rnd(rng, {b, l})};
                 return Case{[=] { return kl_reg(f, h); }, {f.mu, f.logvar, h.mu, h.logvar}};
               }});
  v.push_back({"reparametrize", [](Rng& rng) {
                 const std::size_t b = dim(rng), l = dim(rng);
                 Gaussian<D> q{rnd(rng, {b, l}), rnd(rng, {b, l})};
                 auto eps = gaussian_sample<D>(rng, {b, l});
                 auto p = projector(rng);
                 return Case{[=] { return p(reparametrize(q, eps)); }, {q.mu, q.logvar}};
               }});
  v.push_back({"mean_row_sse", [](Rng& rng) {
                 auto a = rnd(rng, {dim(rng), dim(rng)});
                 auto b = rnd(rng, a.shape());
                 return Case{[=] { return mean_row_sse(a, b); }, {a, b}};
               }});
  v.push_back({"dense", [](Rng& rng) {
                 ParamSet<D> ps;
                 Dense<D> layer(ps, "d", dim(rng), dim(rng), rng);
                 auto x = rnd(rng, {dim(rng), layer.in_features()});
                 auto p = projector(rng);
                 return Case{[=] { return p(ops::tanh(layer(x))); }, {x, layer.w, layer.b}};
               }});
  v.push_back({"attention_block", [](Rng& rng) {
                 ParamSet<D> ps;
                 const std::size_t d = dim(rng, 2, 4), n = dim(rng, 2, 4), b = dim(rng, 1, 2);
                 codec::AttentionBlock<D> blk(ps, "blk", d, 3, rng);
                 auto x = rnd(rng, {b, n, d});
                 auto mask = rnd(rng, {b, 1, n}, 0.1, 1.0);
                 auto p = projector(rng);
                 auto in = ps.tensors();
                 in.push_back(x);
                 return Case{[=] { return p(blk(x, mask, 1e-6)); }, in};
               }});
  v.push_back({"patchify", [](Rng& rng) {
                 auto img = rnd(rng, {dim(rng, 1, 2), 8, 8, 3});
                 auto p = projector(rng);
                 return Case{[=] { return p(codec::unpatchify(ops::tanh(codec::patchify(img, 4)), 8, 4)); }, {img}};
               }});
  v.push_back({"append_token", [](Rng& rng) {
                 const std::size_t b = dim(rng), d = dim(rng);
                 auto t = rnd(rng, {b, dim(rng), d}), e = rnd(rng, {b, d});
                 auto p = projector(rng);
                 return Case{[=] { return p(codec::append_token(t, e)); }, {t, e}};
               }});
  v.push_back({"encoder", [](Rng& rng) {
                 auto cfg = tiny_codec();
                 auto enc = std::make_shared<codec::Encoder<D>>(cfg, rng);
                 const std::size_t b = dim(rng, 1, 2);
                 auto s = rnd(rng, {b, 8, 8, 3}, 0, 1);
                 auto h = csi(rng, b);
                 auto p = projector(rng);
                 auto in = enc->params().tensors();
                 in.push_back(s);
                 return Case{[=] {
                               auto o = enc->encode(s, h, D(0.25));
                               return add(p(o.codeword), o.lc);
                             },
                             in, 24};
               }});
  v.push_back({"decoder", [](Rng& rng) {
                 auto cfg = tiny_codec();
                 auto dec = std::make_shared<codec::Decoder<D>>(cfg, rng);
                 const std::size_t b = dim(rng, 1, 2);
                 auto y = rnd_complex(rng, {b, 2, cfg.grid_width()});
                 auto h = csi(rng, b);
                 auto m = rnd(rng, {b}, 0.05, 0.4);
                 auto p = projector(rng);
                 auto in = dec->params().tensors();
                 in.push_back(y.re);
                 in.push_back(y.im);
                 return Case{[=] { return p(dec->decode(y, h, m)); }, in, 24};
               }});
  v.push_back({"joint_decoder", [](Rng& rng) {
                 auto cfg = tiny_codec();
                 auto dec = std::make_shared<codec::JointDecoder<D>>(cfg, rng);
                 const std::size_t b = dim(rng, 1, 2);
                 auto y1 = rnd_complex(rng, {b, 2, cfg.grid_width()}), y2 = rnd_complex(rng, {b, 2, cfg.grid_width()});
                 auto h1 = csi(rng, b), h2 = csi(rng, b);
                 auto p = projector(rng), q = projector(rng);
                 auto in = dec->params().tensors();
                 in.push_back(y1.re);
                 in.push_back(y2.im);
                 return Case{[=] {
                               auto [a, c] = dec->decode(y1, y2, h1, h2);
                               return add(p(a), q(c));
                             },
                             in, 24};
               }});
  v.push_back({"cmrg", [](Rng& rng) {
                 cmrg::CmrgConfig gc{8, 6, 3, cmrg::MaskRatioGrid::uniform(4, 0.0, 0.4)};
                 auto gen = std::make_shared<cmrg::Cmrg<D>>(gc, rng);
                 const std::size_t b = dim(rng, 1, 3);
                 TD y, yb, eps;
                 do {
                   y = rnd(rng, {b, 8});
                   yb = rnd(rng, {b, 8});
                   eps = gaussian_sample<D>(rng, {b, 3});
                 } while (std::min(argmax_margin(gen->heads(gen->generate(y, yb, eps).z, 1).range),
                                   argmax_margin(gen->heads(gen->generate(y, yb, eps).z, 2).range)) < 1e-3);
                 auto p = projector(rng), q = projector(rng);
                 auto in = gen->params().tensors();
                 in.push_back(y);
                 in.push_back(yb);
                 return Case{[=] {
                               auto o = gen->generate(y, yb, eps, cmrg::ArgmaxGrad::Exact);
                               return add(add(o.l_rec, o.l_reg), add(p(o.m1), q(o.m2)));
                             },
                             in, 24};
               }});
  v.push_back({"sic_cancel", [](Rng& rng) {
                 auto cfg = tiny_codec();
                 auto enc = std::make_shared<codec::Encoder<D>>(cfg, rng);
                 channel::ChannelConfig ch;
                 const std::size_t b = dim(rng, 1, 2);
                 auto y = rnd_complex(rng, {b, 2, cfg.grid_width()});
                 auto s1 = rnd(rng, {b, 8, 8, 3}, 0.1, 0.9);
                 auto h = csi(rng, b);
                 auto p = projector(rng), q = projector(rng);
                 auto in = enc->params().tensors();
                 in.push_back(s1);
                 in.push_back(y.re);
                 return Case{[=] {
                               auto r = sic::cancel(y, s1, h, *enc, D(0.15), ch);
                               return add(p(r.re), q(r.im));
                             },
                             in, 24};
               }});
  return v;
}

// Full training objective L1 + lambda (Lc + Lsic) of a tiny MU-LCFSC model,
// differentiated with respect to a random subset of all parameters.
inline OpCase l2_composite() {
  return {"L2_composite", [](Rng& rng) {
            schemes::ModelConfig mc;
            mc.codec = tiny_codec();
            mc.cmrg_hidden = 6;
            mc.cmrg_latent = 3;
            auto model = std::make_shared<schemes::Model<D>>(schemes::SchemeKind::MuLcfsc, mc, rng.next_u64());
            const std::size_t b = dim(rng, 1, 2);
            schemes::Batch<D> batch{rnd(rng, {b, 8, 8, 3}, 0, 1), rnd(rng, {b, 8, 8, 3}, 0, 1), csi(rng, b),
                                    csi(rng, b)};
            auto eps = gaussian_sample<D>(rng, {b, mc.cmrg_latent});
            const auto ch = channel::ChannelConfig().with_snr_db(rng.uniform(0, 14));
            const Rng noise(rng.next_u64());
            auto replay = std::make_shared<ops::StopReplay<D>>();
            return Case{[=] {
                          ops::StopReplay<D>::Scope hold(*replay);
                          Rng n = noise;
                          auto f = model->forward(batch, ch, n, eps, cmrg::ArgmaxGrad::Exact);
                          auto l1 = training::loss_l1(batch.s1, f.s1_hat, batch.s2, f.s2_hat);
                          return training::loss_total(l1, f.lc, training::loss_lsic(f.l_rec, f.l_reg), D(0.3));
                        },
                        model->params().tensors(), 40};
          }};
}

inline std::vector<OpCase> all_ops() {
  auto v = primitive_ops();
  auto m = model_ops();
  v.insert(v.end(), m.begin(), m.end());
  v.push_back(l2_composite());
  return v;
}

struct OpReport {
  std::string name;
  std::size_t cases = 0;
  double worst = 0;
};

// Runs `cases` random cases of one op at step 1e-6; worst max-norm relative
// error over the cases.
inline OpReport run(const OpCase& op, std::size_t cases, std::uint64_t seed) {
  OpReport r{op.name, cases, 0};
  auto rng = Rng::stream(seed, std::hash<std::string>{}(op.name));
  for (std::size_t i = 0; i < cases; ++i) {
    auto c = op.make(rng);
    auto res = grad_check<D>(c.fn, c.inputs, 1e-6, c.max_coords, &rng);
    r.worst = std::max(r.worst, res.norm_rel_error());
  }
  return r;
}

}  // namespace gradsuite
