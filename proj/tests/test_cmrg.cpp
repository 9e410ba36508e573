#include <gtest/gtest.h>

#include "mulcfsc/mulcfsc.hpp"
#include "oracles.hpp"

using namespace mulcfsc;
using cmrg::ArgmaxGrad;
using cmrg::MaskRatioGrid;

namespace {

Gaussian<double> random_gaussian(Rng& rng, std::size_t b, std::size_t l, double spread) {
  return {uniform_sample<double>(rng, {b, l}, -spread, spread), uniform_sample<double>(rng, {b, l}, -spread, spread)};
}

oracle::DiagGaussian row(const Gaussian<double>& g, std::size_t i) {
  const std::size_t l = g.mu.dim(1);
  oracle::DiagGaussian o;
  for (std::size_t j = 0; j < l; ++j) {
    o.mu.push_back(g.mu.at(i * l + j));
    o.logvar.push_back(g.logvar.at(i * l + j));
  }
  return o;
}

}  // namespace

TEST(Grid, DefaultRowsAreCellCentres) {
  MaskRatioGrid g;
  ASSERT_EQ(g.k(), 4u);
  EXPECT_NEAR(g.row(0)[0], 0.0125, 1e-15);
  EXPECT_NEAR(g.row(3)[3], 0.3875, 1e-15);
  EXPECT_NEAR(g.row(1)[2], 0.1625, 1e-15);
  EXPECT_NEAR(g.midpoint(), 0.2, 1e-15);
}

TEST(Grid, RejectsMalformedRows) {
  EXPECT_THROW(MaskRatioGrid(std::vector<std::vector<double>>{}), std::invalid_argument);
  EXPECT_THROW(MaskRatioGrid({{0.1, 0.2}, {0.3}}), std::invalid_argument);
  EXPECT_THROW(MaskRatioGrid({{0.2, 0.1}, {0.3, 0.4}}), std::invalid_argument);
  EXPECT_THROW(MaskRatioGrid({{0.1, 0.3}, {0.2, 0.4}}), std::invalid_argument);
  EXPECT_THROW(MaskRatioGrid({{0.1, 1.3}, {1.4, 1.5}}), std::invalid_argument);
  EXPECT_THROW(MaskRatioGrid::uniform(3, 0.4, 0.1), std::invalid_argument);
}

TEST(SelectRatio, StaysInsideTheArgmaxRow) {
  Rng rng(1);
  const auto grid = MaskRatioGrid::uniform(5, 0.05, 0.6);
  for (int t = 0; t < 200; ++t) {
    cmrg::SelectionVectors<double> sel{uniform_sample<double>(rng, {4, 5}, -6, 6),
                                       uniform_sample<double>(rng, {4, 5}, -6, 6)};
    auto m = cmrg::select_ratio(grid, sel);
    for (std::size_t i = 0; i < 4; ++i) {
      std::size_t best = 0;
      for (std::size_t j = 1; j < 5; ++j)
        if (sel.range.at(i * 5 + j) > sel.range.at(i * 5 + best)) best = j;
      EXPECT_GE(m.at(i), grid.row(best).front());
      EXPECT_LE(m.at(i), grid.row(best).back());
      const double a = 1e-3 + 50 * rng.uniform();
      auto scaled = cmrg::select_ratio<double>(grid, {ops::scale(sel.range, a), sel.value});
      EXPECT_EQ(scaled.at(i), m.at(i));
    }
  }
}

TEST(SelectRatio, ValueGradientMatchesAndArgmaxModes) {
  Rng rng(2);
  const MaskRatioGrid grid;
  auto r = uniform_sample<double>(rng, {3, 4}, -2, 2), v = uniform_sample<double>(rng, {3, 4}, -2, 2);
  auto w = uniform_sample<double>(rng, {3}, 0.5, 1.5);
  auto f = [&](ArgmaxGrad mode) {
    return [&, mode] { return ops::sum(ops::mul(cmrg::select_ratio<double>(grid, {r, v}, mode), w)); };
  };
  auto exact = grad_check<double>(f(ArgmaxGrad::Exact), {r, v}, 1e-6);
  EXPECT_LT(exact.norm_rel_error(), 1e-7);
  Tape<double> tape;
  Recording<double> on(tape);
  r.set_requires_grad(true);
  v.set_requires_grad(true);
  auto g_st = gradients(tape, f(ArgmaxGrad::StraightThrough)(), {r, v});
  tape.clear();
  auto g_ex = gradients(tape, f(ArgmaxGrad::Exact)(), {r, v});
  double st = 0, ex = 0;
  for (double x : g_st[0]) st += std::abs(x);
  for (double x : g_ex[0]) ex += std::abs(x);
  EXPECT_GT(st, 1e-6);
  EXPECT_EQ(ex, 0.0);
  EXPECT_EQ(g_st[1], g_ex[1]);
}

TEST(SelectRatio, ShapeChecks) {
  const MaskRatioGrid grid;
  EXPECT_THROW(cmrg::select_ratio<double>(grid, {Tensor<double>::zeros({2, 3}), Tensor<double>::zeros({2, 3})}),
               ShapeError);
  EXPECT_THROW(cmrg::select_ratio<double>(grid, {Tensor<double>::zeros({2, 4}), Tensor<double>::zeros({1, 4})}),
               ShapeError);
}

TEST(KlReg, MatchesMonteCarloDivergence) {
  Rng rng(3);
  for (int t = 0; t < 4; ++t) {
    const std::size_t b = 2, l = 4;
    auto p = random_gaussian(rng, b, l, 0.8), q = random_gaussian(rng, b, l, 0.8);
    const double reg = kl_reg(p, q).item();
    double mc = 0;
    for (std::size_t i = 0; i < b; ++i) mc += oracle::kl_monte_carlo(row(q, i), row(p, i), 200000, 100 + t * 10 + i);
    mc /= static_cast<double>(b);
    EXPECT_NEAR((reg - static_cast<double>(l)) / 2, mc, 0.03 * mc + 2e-3);
  }
}

TEST(KlReg, EqualsLatentSizeExactlyAtCoincidence) {
  Rng rng(4);
  for (std::size_t l : {1u, 3u, 8u, 16u}) {
    auto p = random_gaussian(rng, 5, l, 2.0);
    EXPECT_EQ(kl_reg(p, p).item(), static_cast<double>(l));
    auto q = random_gaussian(rng, 5, l, 2.0);
    EXPECT_GT(kl_reg(p, q).item(), static_cast<double>(l));
  }
  Gaussian<double> bad{Tensor<double>::zeros({2, 3}), Tensor<double>::zeros({2, 4})};
  EXPECT_THROW(kl_reg(bad, bad), ShapeError);
}

TEST(Latent, ReparametrizedDrawHasPosteriorMoments) {
  Rng rng(5);
  const std::size_t n = 40000;
  Gaussian<double> q{Tensor<double>::full({n, 2}, 0.7), Tensor<double>::full({n, 2}, std::log(0.25))};
  auto s = cmrg::sample_latent(q, rng);
  double m = 0, v = 0;
  for (double z : s.z.values()) m += z;
  m /= 2.0 * n;
  for (double z : s.z.values()) v += (z - m) * (z - m);
  v /= 2.0 * n;
  EXPECT_NEAR(m, 0.7, 0.01);
  EXPECT_NEAR(v, 0.25, 0.01);
  EXPECT_THROW(reparametrize(q, Tensor<double>::zeros({n, 3})), ShapeError);
}

TEST(Generator, DeterministicAtPosteriorMeanAndInGridRange) {
  Rng rng(6);
  cmrg::CmrgConfig cfg;
  cfg.input = 24;
  cfg.hidden = 16;
  cfg.latent = 4;
  cmrg::Cmrg<double> gen(cfg, rng);
  auto y = gaussian_sample<double>(rng, {5, 24}), yb = gaussian_sample<double>(rng, {5, 24});
  auto a = gen.generate(y, yb, Tensor<double>());
  auto b = gen.generate(y, yb, Tensor<double>());
  EXPECT_EQ(a.m1.values(), b.m1.values());
  EXPECT_EQ(a.m2.values(), b.m2.values());
  EXPECT_EQ(a.z.values(), a.posterior.mu.values());
  for (double m : a.m1.values()) {
    EXPECT_GE(m, cfg.grid.row(0).front());
    EXPECT_LE(m, cfg.grid.row(3).back());
  }
  auto c = gen.generate(y, yb, gaussian_sample<double>(rng, {5, 4}));
  EXPECT_NE(c.z.values(), a.z.values());
  EXPECT_GE(a.l_reg.item(), 4.0);
  EXPECT_THROW(gen.generate(gaussian_sample<double>(rng, {5, 23}), yb, Tensor<double>()), ShapeError);
  EXPECT_THROW(gen.heads(a.z, 3), std::invalid_argument);
}
