#include <gtest/gtest.h>

#include <cmath>

#include "fixtures.hpp"
#include "resexp/error.hpp"
#include "resexp/jumpboard/jumpboard.hpp"

using namespace resexp;
using nd::Tensor;

namespace {

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::InvalidState;
}

}  // namespace

TEST(GradientStats, IdentityTopSquaredLoss) {
  // q = z - y for an identity top map under 1/2 |z - y|^2.
  const Tensor q = Tensor::matrix({{1, 0}});
  const auto s = jump::gradient_stats_from(q, q);
  EXPECT_EQ(s.mu, Tensor::vector({1, 0}));
}

TEST(GradientStats, MeanAndVarianceHandExample) {
  const Tensor q = Tensor::matrix({{1, 0}, {-1, 0}});
  const auto s = jump::gradient_stats_from(q, q);
  EXPECT_EQ(s.mu, Tensor::vector({0, 0}));
  EXPECT_EQ(s.sigma_diag, Tensor::vector({2, 0}));
}

TEST(GradientStats, IdenticalTestSetGivesSameAverage) {
  const auto in = fixture::trained_instance(1);
  const auto s = jump::collect_gradient_stats(in.spec, in.state, in.data.train, in.data.train);
  EXPECT_EQ(s.mu, s.g);
  EXPECT_DOUBLE_EQ(s.mu_dot_g, s.mu_norm_sq);
}

TEST(Direction, ZeroGradientsHaveNoDirection) {
  EXPECT_EQ(code_of([] { jump::empirical_descent_direction(Tensor({3, 2}), Tensor::filled({3, 4}, 1.0)); }),
            ErrorCode::NoDescentDirection);
}

TEST(Direction, SingleSampleHandExample) {
  const auto d = jump::empirical_descent_direction(Tensor::matrix({{1, 0}}), Tensor::matrix({{2}}));
  EXPECT_EQ(d.C, Tensor::matrix({{2}, {0}}));
  EXPECT_DOUBLE_EQ(d.frob_sq, 4.0);
  EXPECT_EQ(d.delta_v, Tensor::matrix({{-2}, {0}}));
  // First-order change of mean_i q_i^T (V psi_i) along -C is -|C|_F^2.
  const double deriv = 1.0 * d.delta_v(0, 0) * 2.0 + 0.0 * d.delta_v(1, 0) * 2.0;
  EXPECT_DOUBLE_EQ(deriv, -4.0);
}

TEST(Direction, OppositePairsCancel) {
  const Tensor q = Tensor::matrix({{0.3, -1, 2}, {-0.3, 1, -2}});
  const Tensor psi = Tensor::matrix({{1, 0.5}, {1, 0.5}});
  EXPECT_EQ(code_of([&] { jump::empirical_descent_direction(q, psi); }), ErrorCode::NoDescentDirection);
}

TEST(Direction, BilinearInFeatures) {
  const Tensor q = Tensor::matrix({{0.3, -1}, {0.2, 1}, {1, 0}});
  const Tensor psi = Tensor::matrix({{1, 0.5}, {2, 0}, {0, 3}});
  const auto d1 = jump::empirical_descent_direction(q, psi);
  const auto d2 = jump::empirical_descent_direction(q, psi * 2.5);
  for (std::size_t i = 0; i < d1.C.size(); ++i) EXPECT_NEAR(d2.C[i], 2.5 * d1.C[i], 1e-15);
}

TEST(Direction, EstimationEqualToTrainMatchesEmpirical) {
  const auto in = fixture::trained_instance(2);
  const auto block = net::make_block(in.spec, net::FeatureKind::ReluRandom, 6, 3);
  const auto a = jump::descent_direction_on(in.spec, in.state, block, in.data.train);
  const auto b = jump::population_descent_direction(in.spec, in.state, block, in.data.train);
  EXPECT_EQ(a.C, b.C);
}

TEST(Direction, DirectionalDerivativeIsMinusFrobeniusSquared) {
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    const auto in = fixture::trained_instance(seed);
    for (auto kind : {net::FeatureKind::ReluRandom, net::FeatureKind::Constant}) {
      const auto block = net::make_block(in.spec, kind, 6, seed + 10);
      const auto d = jump::descent_direction_on(in.spec, in.state, block, in.data.train);
      auto G = [&](double t) {
        auto b = block;
        b.v = d.delta_v * t;
        return net::mean_loss(in.spec, in.state, &b, in.data.train);
      };
      const double h = 1e-6;
      const double fd = (G(h) - G(-h)) / (2 * h);
      EXPECT_LT(fd, 0.0);
      EXPECT_NEAR(fd, -d.frob_sq, 1e-3 * d.frob_sq);
    }
  }
}

TEST(LineSearch, Parabola) {
  const auto r = jump::line_search_eta([](double t) { return (t - 1) * (t - 1); }, -2.0, {1.0, 1e-4, 60});
  EXPECT_GT(r.eta, 0.0);
  EXPECT_LT(r.eta, 2.0);
  EXPECT_LT(r.value, 1.0);
  EXPECT_FALSE(r.degenerate);
}

TEST(LineSearch, BacktracksWhenTheFirstStepOvershoots) {
  const auto r = jump::line_search_eta([](double t) { return (t - 1) * (t - 1); }, -2.0, {8.0, 1e-4, 60});
  // G(8) = 49, G(4) = 9, G(2) = 1 = G(0): the first decrease is at eta = 1
  EXPECT_EQ(r.halvings, 3);
  EXPECT_DOUBLE_EQ(r.eta, 1.0);
}

TEST(LineSearch, NoDecreaseIsDegenerate) {
  const auto r = jump::line_search_eta([](double t) { return 1.0 + t * t; }, -1.0, {0.1, 1e-4, 10});
  EXPECT_TRUE(r.degenerate);
  EXPECT_EQ(r.eta, 0.0);
  EXPECT_EQ(r.value, r.value0);
}

TEST(Jumpboard, FirstAcceptedStepDecreasesTrainLoss) {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto in = fixture::trained_instance(seed + 20);
    const auto block = net::make_block(in.spec, net::FeatureKind::ReluRandom, 8, seed);
    const auto d = jump::descent_direction_on(in.spec, in.state, block, in.data.train);
    const auto jb = jump::build_jumpboard(in.spec, in.state, block, d, in.data.train);
    EXPECT_FALSE(jb.search.degenerate);
    EXPECT_LT(jump::train_loss(in.spec, jb.model, in.data.train), net::mean_loss(in.spec, in.state, nullptr,
                                                                                 in.data.train));
    EXPECT_LE(jb.model.block->v.norm(), block.v_frob_cap * (1 + 1e-12));
    EXPECT_LE(net::spectral_norm(jb.model.block->v), block.v_sigma_cap * (1 + 1e-12));
  }
}

TEST(Selection, FallsBackToJumpboard) {
  const auto s = jump::select_by_loss(0.5, 0.4);
  EXPECT_FALSE(s.chose_alg);
  EXPECT_DOUBLE_EQ(s.delta_erm, 0.0);
}

TEST(Selection, KeepsTheTrainedCandidate) {
  const auto s = jump::select_by_loss(0.3, 0.4);
  EXPECT_TRUE(s.chose_alg);
  EXPECT_NEAR(s.delta_erm, 0.1, 1e-15);
}

TEST(Selection, TieGoesToAlg) {
  const auto s = jump::select_by_loss(0.4, 0.4);
  EXPECT_TRUE(s.chose_alg);
  EXPECT_EQ(s.delta_erm, 0.0);
}

TEST(Margins, IdenticalModelsHaveZeroMargins) {
  const auto in = fixture::trained_instance(3);
  jump::ExpandedModel old{in.state, std::nullopt};
  const auto r = jump::measure_margins(in.spec, old, old, old, in.data.train, in.data.test, &in.data.proxy);
  EXPECT_EQ(r.delta_R_test, 0.0);
  EXPECT_EQ(r.delta_train_S, 0.0);
  EXPECT_EQ(r.delta_ERM, 0.0);
  EXPECT_EQ(r.delta_R, 0.0);
  EXPECT_TRUE(r.has_proxy);
}

TEST(Margins, JsonRoundTrip) {
  auto r = jump::margins_from_losses(0.9, 0.8, 0.7, 1.0, 0.95, 0.9);
  EXPECT_NEAR(r.delta_train_S, 0.1, 1e-15);
  EXPECT_NEAR(r.delta_ERM, 0.1, 1e-15);
  EXPECT_NEAR(r.delta_R_test, 0.05, 1e-15);
  const auto back = jump::margin_report_from_json(jump::margin_report_to_json(r));
  EXPECT_EQ(back.L_test_new, r.L_test_new);
  EXPECT_EQ(back.delta_ERM, r.delta_ERM);
  EXPECT_EQ(back.has_proxy, r.has_proxy);
}

TEST(FirstOrderMargin, Products) {
  jump::GradientStats s;
  s.mu_dot_g = 0.0;
  EXPECT_EQ(jump::first_order_test_margin(s, 0.3), 0.0);
  s.mu_dot_g = 2.0;
  EXPECT_DOUBLE_EQ(jump::first_order_test_margin(s, 1e-3), 2e-3);
}

TEST(FirstOrderMargin, ResidualIsSecondOrder) {
  const auto in = fixture::trained_instance(4);
  const auto s = jump::collect_gradient_stats(in.spec, in.state, in.data.train, in.data.test);
  auto block = net::make_block(in.spec, net::FeatureKind::Constant, 1, 0);
  const double base = net::mean_loss(in.spec, in.state, nullptr, in.data.test);
  auto residual = [&](double eta) {
    for (std::size_t i = 0; i < in.spec.width; ++i) block.v(i, 0) = -eta * s.mu[i];
    const double measured = base - net::mean_loss(in.spec, in.state, &block, in.data.test);
    return std::abs(measured - jump::first_order_test_margin(s, eta));
  };
  const double eta = 0.5 / std::sqrt(s.mu_norm_sq);
  const double r1 = residual(eta), r2 = residual(eta / 2), r3 = residual(eta / 4);
  EXPECT_NEAR(r1 / r2, 4.0, 0.6);
  EXPECT_NEAR(r2 / r3, 4.0, 0.3);
}
