#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "mulcfsc/mulcfsc.hpp"

using namespace mulcfsc;
using codec::CodecConfig;

namespace {

CodecConfig small() {
  CodecConfig c;
  c.image_size = 16;
  c.patch = 4;
  c.width = 8;
  c.blocks = 1;
  c.ffn = 8;
  c.csi_hidden = 8;
  c.cvae_hidden = 8;
  c.cvae_latent = 4;
  c.codeword_length = 48;
  return c;
}

ComplexTensor<double> csi(Rng& rng, std::size_t b) { return stack<double>(channel::sample_csi_pool(rng, b, 2, 2)); }

Tensor<double> row(const Tensor<double>& t, std::size_t i) {
  const std::size_t per = t.numel() / t.dim(0);
  Shape s = t.shape();
  s[0] = 1;
  return Tensor<double>(s, std::vector<double>(t.values().begin() + i * per, t.values().begin() + (i + 1) * per));
}

}  // namespace

TEST(Config, ValidationCatchesBadShapes) {
  auto c = small();
  c.patch = 5;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = small();
  c.codeword_length = 50;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = small();
  c.tau = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  Rng rng(0);
  c = small();
  c.width = 0;
  EXPECT_THROW(codec::Encoder<double>(c, rng), std::invalid_argument);
}

TEST(Patches, RoundTripAndLayout) {
  Rng rng(1);
  auto img = uniform_sample<double>(rng, {2, 8, 8, 3}, 0, 1);
  auto p = codec::patchify(img, 4);
  EXPECT_EQ(p.shape(), (Shape{2, 4, 48}));
  // Patch 1 of image 1 is the top-right 4x4 block; entry (y=2, x=3, c=1).
  EXPECT_EQ(p.at((1 * 4 + 1) * 48 + (2 * 4 + 3) * 3 + 1), img.at(((1 * 8 + 2) * 8 + 4 + 3) * 3 + 1));
  EXPECT_EQ(codec::unpatchify(p, 8, 4).values(), img.values());
  EXPECT_THROW(codec::patchify(Tensor<double>::zeros({1, 6, 6, 3}), 4), ShapeError);
}

TEST(RankQuantile, OrderedAndScaleInvariant) {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    auto s = gaussian_sample<double>(rng, {2, 12});
    auto q = codec::rank_quantile(s, 0.05);
    const double a = 0.01 + 100 * rng.uniform(), shift = rng.uniform(-5, 5);
    auto q2 = codec::rank_quantile(ops::add_scalar(ops::scale(s, a), shift), 0.05);
    for (std::size_t i = 0; i < q.numel(); ++i) {
      EXPECT_GT(q.at(i), 0.0);
      EXPECT_LT(q.at(i), 1.0);
      EXPECT_NEAR(q.at(i), q2.at(i), 1e-9);
    }
    for (std::size_t b = 0; b < 2; ++b)
      for (std::size_t i = 0; i < 12; ++i)
        for (std::size_t j = 0; j < 12; ++j)
          if (s.at(b * 12 + i) < s.at(b * 12 + j)) {
            EXPECT_LT(q.at(b * 12 + i), q.at(b * 12 + j));
          }
  }
}

TEST(RankQuantile, ApproachesHardRankWhenSeparated) {
  std::vector<double> v(10);
  std::iota(v.begin(), v.end(), 0.0);
  std::reverse(v.begin(), v.end());
  auto q = codec::rank_quantile(Tensor<double>({1, 10}, v), 0.01);
  for (std::size_t i = 0; i < 10; ++i) EXPECT_NEAR(q.at(i), (9 - static_cast<double>(i) + 0.5) / 10, 1e-6);
}

TEST(MaskMap, KeepsRoughlyOneMinusRatio) {
  Rng rng(3);
  auto s = gaussian_sample<double>(rng, {4, 64});
  for (double m : {0.0, 0.1, 0.25, 0.4}) {
    auto w = codec::mask_map(s, Tensor<double>::scalar(m), 0.01, 0.01);
    std::size_t kept = 0;
    for (double x : w.values()) kept += x > 0.5;
    EXPECT_NEAR(static_cast<double>(kept) / 256, 1.0 - m, 0.02) << m;
  }
  auto per_row = codec::mask_map(s, Tensor<double>::of({4}, {0.0, 0.4, 0.0, 0.4}), 0.1, 0.05);
  EXPECT_EQ(per_row.shape(), (Shape{4, 64}));
  EXPECT_THROW(codec::mask_map(s, Tensor<double>::scalar(1.5), 0.1, 0.05), std::invalid_argument);
  EXPECT_THROW(codec::mask_map(s, Tensor<double>::scalar(-0.1), 0.1, 0.05), std::invalid_argument);
}

TEST(Attention, MaskedKeysGetNegligibleWeight) {
  Rng rng(4);
  auto q = gaussian_sample<double>(rng, {1, 3, 4}), k = gaussian_sample<double>(rng, {1, 5, 4});
  auto mask = Tensor<double>::of({1, 1, 5}, {1, 0, 1, 1, 0});
  auto w = codec::attention_weights(q, k, mask, 1e-6);
  auto plain = codec::attention_weights(q, k, Tensor<double>(), 1e-6);
  for (std::size_t r = 0; r < 3; ++r) {
    EXPECT_LT(w.at(r * 5 + 1), 1e-4);
    EXPECT_LT(w.at(r * 5 + 4), 1e-4);
    // Surviving keys keep their relative weights.
    EXPECT_NEAR(w.at(r * 5 + 0) / w.at(r * 5 + 2), plain.at(r * 5 + 0) / plain.at(r * 5 + 2), 1e-3);
  }
  EXPECT_THROW(codec::attention_weights(q, k, Tensor<double>::zeros({1, 2, 5}), 1e-6), ShapeError);
}

TEST(Encoder, ShapesDeterminismAndBatchIndependence) {
  Rng rng(5);
  auto cfg = small();
  codec::Encoder<double> enc(cfg, rng);
  auto img = uniform_sample<double>(rng, {3, 16, 16, 3}, 0, 1);
  auto h = csi(rng, 3);
  auto a = enc.encode(img, h, 0.2);
  auto b = enc.encode(img, h, 0.2);
  EXPECT_EQ(a.codeword.shape(), (Shape{3, 48}));
  EXPECT_EQ(a.scores.shape(), (Shape{3, 16}));
  EXPECT_EQ(a.lc.numel(), 1u);
  EXPECT_EQ(a.codeword.values(), b.codeword.values());
  ComplexTensor<double> h1{row(h.re, 1), row(h.im, 1)};
  auto one = enc.encode(row(img, 1), h1, 0.2);
  for (std::size_t i = 0; i < 48; ++i) EXPECT_NEAR(one.codeword.at(i), a.codeword.at(48 + i), 1e-12);
  auto other = enc.encode(img, h, 0.35);
  EXPECT_NE(other.codeword.values(), a.codeword.values());
  EXPECT_THROW(enc.encode(Tensor<double>::zeros({1, 32, 32, 3}), csi(rng, 1), 0.2), ShapeError);
}

TEST(Decoder, ImagesInUnitRangeAndRatioMatters) {
  Rng rng(6);
  auto cfg = small();
  codec::Decoder<double> dec(cfg, rng);
  auto y = ComplexTensor<double>{gaussian_sample<double>(rng, {2, 2, 12}), gaussian_sample<double>(rng, {2, 2, 12})};
  auto h = csi(rng, 2);
  auto out = dec.decode(y, h, Tensor<double>::of({2}, {0.1, 0.1}));
  EXPECT_EQ(out.shape(), (Shape{2, 16, 16, 3}));
  for (double v : out.values()) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
  auto other = dec.decode(y, h, Tensor<double>::of({2}, {0.4, 0.4}));
  EXPECT_NE(out.values(), other.values());
  auto bad = ComplexTensor<double>{Tensor<double>::zeros({2, 2, 11}), Tensor<double>::zeros({2, 2, 11})};
  EXPECT_THROW(dec.decode(bad, h, Tensor<double>::of({2}, {0.1, 0.1})), ShapeError);
}

TEST(Decoder, AblationSwitchesDropModules) {
  Rng rng(7);
  auto cfg = small();
  codec::Decoder<double> full(cfg, rng);
  cfg.csi_fusion = false;
  cfg.masking = false;
  codec::Decoder<double> bare(cfg, rng);
  EXPECT_LT(bare.params().census(), full.params().census());
  EXPECT_THROW(bare.params().find("score.w"), std::out_of_range);
  auto y = ComplexTensor<double>{gaussian_sample<double>(rng, {1, 2, 12}), gaussian_sample<double>(rng, {1, 2, 12})};
  // Without masking the ratio is ignored.
  auto a = bare.decode(y, csi(rng, 1), Tensor<double>::of({1}, {0.0}));
  auto b = bare.decode(y, csi(rng, 1), Tensor<double>::of({1}, {0.4}));
  EXPECT_EQ(a.values(), b.values());
}

TEST(JointDecoder, TwoImagesFromBothEstimates) {
  Rng rng(8);
  auto cfg = small();
  codec::JointDecoder<double> dec(cfg, rng);
  auto y1 = ComplexTensor<double>{gaussian_sample<double>(rng, {2, 2, 12}), gaussian_sample<double>(rng, {2, 2, 12})};
  auto y2 = ComplexTensor<double>{gaussian_sample<double>(rng, {2, 2, 12}), gaussian_sample<double>(rng, {2, 2, 12})};
  auto h1 = csi(rng, 2), h2 = csi(rng, 2);
  auto [a, b] = dec.decode(y1, y2, h1, h2);
  EXPECT_EQ(a.shape(), (Shape{2, 16, 16, 3}));
  EXPECT_EQ(b.shape(), (Shape{2, 16, 16, 3}));
  auto [c, d] = dec.decode(y1, y1, h1, h2);
  EXPECT_NE(a.values(), c.values());
  EXPECT_THROW(dec.decode(y1, ComplexTensor<double>{Tensor<double>::zeros({2, 2, 10}), Tensor<double>::zeros({2, 2, 10})}, h1, h2),
               ShapeError);
}
