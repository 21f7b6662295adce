#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "resexp/error.hpp"
#include "resexp/ndcore/stats.hpp"
#include "resexp/ndcore/tape.hpp"

using namespace resexp;
using nd::Tape;
using nd::Tensor;

namespace {

template <typename F>
ErrorCode code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no resexp::Error thrown";
  return ErrorCode::InvalidState;
}

}  // namespace

TEST(Tensor, MatmulHandExample) {
  const Tensor c = nd::matmul(Tensor::matrix({{1, 2}, {3, 4}}), Tensor::matrix({{1}, {1}}));
  EXPECT_EQ(c, Tensor::matrix({{3}, {7}}));
}

TEST(Tensor, ShapeMismatchIsReported) {
  EXPECT_EQ(code_of([] { nd::matmul(Tensor::matrix({{1, 2}}), Tensor::matrix({{1, 2}})); }), ErrorCode::ShapeMismatch);
  Tape t;
  const auto a = t.leaf(Tensor::vector({1, 2}));
  const auto b = t.leaf(Tensor::vector({1, 2, 3}));
  EXPECT_EQ(code_of([&] { t.add(a, b); }), ErrorCode::ShapeMismatch);
}

TEST(Tape, Relu) {
  Tape t;
  const auto r = t.relu(t.leaf(Tensor::vector({-1, 0, 2})));
  EXPECT_EQ(t.value(r), Tensor::vector({0, 0, 2}));
}

TEST(Tape, SoftmaxCrossEntropyValueAndGradient) {
  Tape t;
  const auto z = t.leaf(Tensor::vector({0, 0}));
  const std::vector<int> y{0};
  const auto loss = t.mean(t.softmax_cross_entropy(z, y));
  EXPECT_NEAR(t.value(loss).item(), std::log(2.0), 1e-15);
  t.backward(loss);
  EXPECT_NEAR(t.grad(z)[0], -0.5, 1e-15);
  EXPECT_NEAR(t.grad(z)[1], 0.5, 1e-15);
}

TEST(Tape, SquareDerivative) {
  Tape t;
  const auto x = t.leaf(Tensor::scalar(3.0));
  t.backward(t.mul(x, x));
  EXPECT_DOUBLE_EQ(t.grad(x).item(), 6.0);
}

TEST(Tape, SquaredErrorGradientIsResidual) {
  Tape t;
  const auto z = t.leaf(Tensor::vector({1, 2}));
  const auto y = t.leaf(Tensor::vector({0, 0}));
  t.backward(t.sum(t.squared_error(z, y)));
  EXPECT_EQ(t.grad(z), Tensor::vector({1, 2}));
}

TEST(Tape, LinearTopGradientMatchesChainRule) {
  // loss = 1/2 |W z - y|^2, grad_z = W^T (W z - y)
  const Tensor W = Tensor::matrix({{1, -2, 0.5}, {0.3, 1, 2}});
  const Tensor z0 = Tensor::vector({0.2, -1, 0.7});
  const Tensor y0 = Tensor::vector({1, -1});
  Tape t;
  const auto z = t.leaf(z0);
  const auto w = t.leaf(W);
  t.backward(t.sum(t.squared_error(t.linear(z, w), t.leaf(y0))));
  Tensor r = nd::matmul(W, Tensor::matrix(3, 1, z0.values()));
  for (std::size_t i = 0; i < 2; ++i) r[i] -= y0[i];
  const Tensor expected = nd::matmul(W.transposed(), r);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(t.grad(z)[i], expected[i], 1e-14);
}

TEST(Tape, DisconnectedNodeHasZeroGradient) {
  Tape t;
  const auto x = t.leaf(Tensor::vector({1, 2}));
  const auto lonely = t.leaf(Tensor::matrix({{1, 2}, {3, 4}}));
  t.backward(t.sum(x));
  EXPECT_EQ(t.grad(lonely), Tensor::zeros_like(t.value(lonely)));
}

TEST(Tape, BackwardConsumesTheRecording) {
  Tape t;
  const auto x = t.leaf(Tensor::scalar(1.0));
  const auto y = t.scale(x, 2.0);
  t.backward(y);
  EXPECT_EQ(code_of([&] { t.backward(y); }), ErrorCode::TapeConsumed);
  EXPECT_EQ(code_of([&] { t.leaf(Tensor::scalar(0.0)); }), ErrorCode::TapeConsumed);
}

TEST(Tape, UnknownNodeAndNonFinite) {
  Tape t;
  const auto x = t.leaf(Tensor::scalar(1.0));
  EXPECT_EQ(code_of([&] { t.add(x, 17); }), ErrorCode::UnknownNode);
  EXPECT_EQ(code_of([&] { t.leaf(Tensor::scalar(NAN)); }), ErrorCode::NonFinite);
  EXPECT_EQ(code_of([&] { t.scale(x, INFINITY); }), ErrorCode::NonFinite);
}

TEST(Tape, GradientIsLinearInTheSeed) {
  std::mt19937_64 rng(5);
  for (int rep = 0; rep < 20; ++rep) {
    const Tensor w1 = oracle::random_tensor({2, 3}, rng);
    const Tensor x0 = oracle::random_tensor({4, 3}, rng);
    const double a = 1.7, b = -0.4;
    auto grad_with = [&](double s1, double s2) {
      Tape t;
      const auto x = t.leaf(x0);
      const auto y = t.relu(t.linear(x, t.leaf(w1)));
      Tensor seed({4, 2});
      for (std::size_t i = 0; i < seed.size(); ++i) seed[i] = s1 * (1.0 + i) + s2 * std::cos(double(i));
      t.backward(y, seed);
      return t.grad(x);
    };
    const Tensor ga = grad_with(1, 0), gb = grad_with(0, 1), gab = grad_with(a, b);
    for (std::size_t i = 0; i < gab.size(); ++i) EXPECT_NEAR(gab[i], a * ga[i] + b * gb[i], 1e-12);
  }
}

TEST(Tape, RandomGraphsMatchFiniteDifferences) {
  std::mt19937_64 rng(20240101);
  for (int rep = 0; rep < 60; ++rep) {
    const auto g = oracle::random_smooth_graph(rng);
    EXPECT_LE(oracle::gradient_check(g), 1e-5) << "graph " << rep;
  }
}

TEST(Stats, SubstreamSeedsAreDistinctAndStable) {
  EXPECT_EQ(nd::substream_seed(1, 2), nd::substream_seed(1, 2));
  EXPECT_NE(nd::substream_seed(1, 2), nd::substream_seed(1, 3));
  EXPECT_NE(nd::substream_seed(1, 2), nd::substream_seed(2, 2));
}

TEST(Stats, ColumnVariancesUseSampleDenominator) {
  const Tensor q = Tensor::matrix({{1, 0}, {-1, 0}});
  EXPECT_EQ(nd::column_variances(q), Tensor::vector({2, 0}));
  EXPECT_EQ(nd::column_variances(Tensor::matrix({{3, 4}})), Tensor::vector({0, 0}));
}

TEST(Stats, WilsonUpperKnownValues) {
  // 0 of 100: z^2 / (n + z^2)
  const double z = 1.959963984540054;
  EXPECT_NEAR(nd::wilson_upper(0, 100), z * z / (100 + z * z), 1e-15);
  EXPECT_GT(nd::wilson_upper(5, 100), 0.05);
  EXPECT_LE(nd::wilson_upper(100, 100), 1.0);
}

TEST(Stats, SpearmanHandlesTiesAndConstants) {
  const std::vector<double> x{1, 2, 3, 4}, up{10, 20, 30, 40}, down{4, 3, 2, 1}, tied{1, 1, 2, 2};
  EXPECT_DOUBLE_EQ(nd::spearman(x, up), 1.0);
  EXPECT_DOUBLE_EQ(nd::spearman(x, down), -1.0);
  EXPECT_NEAR(nd::spearman(x, tied), 0.894427190999916, 1e-12);
  EXPECT_TRUE(std::isnan(nd::spearman(x, std::vector<double>{5, 5, 5, 5})));
}

TEST(Stats, IndexPairsAreDistinctOrdered) {
  std::mt19937_64 rng(3);
  const auto all = nd::sample_index_pairs(5, 100, rng);
  EXPECT_EQ(all.size(), 10u);
  const auto some = nd::sample_index_pairs(100, 50, rng);
  EXPECT_EQ(some.size(), 50u);
  for (auto [j, k] : some) EXPECT_LT(j, k);
}

TEST(Stats, LeastSquaresRecoversLine) {
  const std::vector<double> x{0, 1, 2, 3}, y{1, 3, 5, 7};
  const auto f = nd::least_squares(x, y);
  EXPECT_NEAR(f.slope, 2.0, 1e-14);
  EXPECT_NEAR(f.intercept, 1.0, 1e-14);
}
