#include <gtest/gtest.h>

#include "grad_suite.hpp"

using namespace mulcfsc;

TEST(GradSuite, EveryOpMatchesFiniteDifferences) {
  for (const auto& op : gradsuite::all_ops()) {
    auto r = gradsuite::run(op, 4, 17);
    EXPECT_LT(r.worst, 1e-4) << op.name;
  }
}

TEST(Tape, RecordsOnlyWhileActive) {
  Tensor<double> x({2}, {1.0, 2.0}, true);
  Tape<double> tape;
  { auto y = ops::square(x); }
  EXPECT_EQ(tape.size(), 0u);
  {
    Recording<double> on(tape);
    auto y = ops::sum(ops::square(x));
    {
      NoGrad<double> off;
      auto z = ops::exp(x);
    }
    EXPECT_EQ(tape.size(), 2u);
    auto g = gradients(tape, y, {x});
    EXPECT_DOUBLE_EQ(g[0][0], 2.0);
    EXPECT_DOUBLE_EQ(g[0][1], 4.0);
  }
}

TEST(Tape, AccumulatesAcrossSharedUses) {
  Tensor<double> x({1}, {3.0}, true);
  Tape<double> tape;
  Recording<double> on(tape);
  auto y = ops::sum(ops::add(ops::mul(x, x), x));  // x^2 + x
  auto g = gradients(tape, y, {x});
  EXPECT_DOUBLE_EQ(g[0][0], 7.0);
}

TEST(Ops, MatmulMatchesNaiveLoops) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t b = 1 + rng.below(3), m = 1 + rng.below(9), k = 1 + rng.below(9), n = 1 + rng.below(9);
    auto a = gaussian_sample<double>(rng, {b, m, k});
    auto c = gaussian_sample<double>(rng, {b, k, n});
    auto out = ops::matmul(a, c);
    for (std::size_t t = 0; t < b; ++t)
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          double s = 0;
          for (std::size_t q = 0; q < k; ++q) s += a.at((t * m + i) * k + q) * c.at((t * k + q) * n + j);
          EXPECT_NEAR(out.at((t * m + i) * n + j), s, 1e-12);
        }
  }
}

TEST(Ops, SoftmaxRowsAreDistributions) {
  Rng rng(4);
  auto x = uniform_sample<double>(rng, {5, 7}, -30, 30);
  auto p = ops::softmax(x);
  for (std::size_t i = 0; i < 5; ++i) {
    double s = 0;
    for (std::size_t j = 0; j < 7; ++j) {
      EXPECT_GE(p.at(i * 7 + j), 0.0);
      s += p.at(i * 7 + j);
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Ops, BroadcastFollowsTrailingAxes) {
  auto a = Tensor<double>::of({2, 3}, {1, 2, 3, 4, 5, 6});
  auto r = ops::add(a, Tensor<double>::of({3}, {10, 20, 30}));
  EXPECT_EQ(r.values(), (std::vector<double>{11, 22, 33, 14, 25, 36}));
  auto c = ops::mul(a, Tensor<double>::of({2, 1}, {2, -1}));
  EXPECT_EQ(c.values(), (std::vector<double>{2, 4, 6, -4, -5, -6}));
}

TEST(Ops, ShapeErrorsNameTheOperation) {
  auto a = Tensor<double>::zeros({2, 3});
  auto b = Tensor<double>::zeros({4, 5});
  try {
    ops::add(a, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("add"), std::string::npos);
  }
  EXPECT_THROW(ops::matmul(a, b), ShapeError);
  EXPECT_THROW(ops::reshape(a, {5}), ShapeError);
  EXPECT_THROW(ops::slice(a, 1, 2, 2), ShapeError);
}

TEST(Ops, NonFiniteResultsAreRejected) {
  auto x = Tensor<double>::of({2}, {1.0, -1.0});
  EXPECT_THROW(ops::log(x), NumericError);
  EXPECT_THROW(ops::sqrt(x), NumericError);
  EXPECT_THROW(ops::div(x, Tensor<double>::zeros({2})), NumericError);
  EXPECT_THROW(ops::exp(Tensor<double>::of({1}, {1000.0})), NumericError);
  auto f = Tensor<float>::of({1}, {100.0f});
  EXPECT_THROW(ops::exp(f), NumericError);
}

TEST(Ops, SinglePrecisionTracksDouble) {
  Rng rng(5);
  auto a = gaussian_sample<double>(rng, {4, 6});
  auto w = gaussian_sample<double>(rng, {6, 3});
  auto af = Tensor<float>({4, 6}, std::vector<float>(a.values().begin(), a.values().end()));
  auto wf = Tensor<float>({6, 3}, std::vector<float>(w.values().begin(), w.values().end()));
  auto d = ops::softmax(ops::tanh(ops::matmul(a, w)));
  auto f = ops::softmax(ops::tanh(ops::matmul(af, wf)));
  for (std::size_t i = 0; i < d.numel(); ++i) EXPECT_NEAR(d.at(i), f.at(i), 1e-5);
}

TEST(GradCheck, DetectsAWrongBackward) {
  Tensor<double> x({3}, {0.1, 0.5, -0.3});
  auto wrong = [&] {
    auto v = x.values();
    std::vector<double> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] * v[i];
    return ops::sum(ops::custom<double>("bad_square", x.shape(), out, {x},
                                        [x](std::span<const double> g, ops::detail::GradSlots<double>& s,
                                            std::span<const double>) {
                                          for (std::size_t i = 0; i < g.size(); ++i) (*s[0])[i] += g[i] * x.at(i);
                                        }));
  };
  auto r = grad_check<double>(wrong, {x}, 1e-6);
  EXPECT_GT(r.norm_rel_error(), 0.1);
}

TEST(Rng, StreamsAreReproducibleAndDistinct) {
  auto a = Rng::stream(5, 1), b = Rng::stream(5, 1), c = Rng::stream(5, 2);
  EXPECT_EQ(a.next_u64(), b.next_u64());
  EXPECT_NE(a.next_u64(), c.next_u64());
  a.normal();
  Rng d;
  d.set_state(a.state());
  EXPECT_EQ(a.normal(), d.normal());
  EXPECT_THROW(d.set_state("nonsense"), std::invalid_argument);
}
