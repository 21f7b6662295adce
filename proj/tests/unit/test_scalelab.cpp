#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "resexp/error.hpp"
#include "resexp/scalelab/scalelab.hpp"

using namespace resexp;
using scale::CouplingKind;
using scale::CouplingModel;
using scale::ScalingParams;

TEST(Recursion, ExponentialWhenBetaIsZero) {
  const auto d = scale::run_recursion(ScalingParams::with_rate(0.0, 0.5, 1.0, 30));
  ASSERT_EQ(d.size(), 31u);
  for (std::size_t k = 0; k < d.size(); ++k) EXPECT_NEAR(d[k], std::pow(0.5, double(k)), 1e-12);
}

TEST(Recursion, TwoHandIterations) {
  const auto d = scale::run_recursion(ScalingParams::with_rate(1.0, 0.1, 1.0, 2));
  EXPECT_DOUBLE_EQ(d[1], 0.9);
  EXPECT_NEAR(d[2], 0.819, 1e-15);
}

TEST(Recursion, NoRateIsConstant) {
  for (double v : scale::run_recursion(ScalingParams::with_rate(0.7, 0.0, 2.5, 10))) EXPECT_EQ(v, 2.5);
}

TEST(Recursion, CouplingParameterization) {
  ScalingParams p;
  p.c_G = 0.4;
  p.q = 2.0;
  EXPECT_DOUBLE_EQ(p.c(), 0.1);
}

TEST(Recursion, OvershootIsReported) {
  try {
    scale::run_recursion(ScalingParams::with_rate(1.0, 2.0, 1.0, 3));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::StepTooLarge);
  }
}

TEST(Envelope, HandValueAndStart) {
  const auto p = ScalingParams::with_rate(1.0, 0.1, 1.0, 10);
  EXPECT_DOUBLE_EQ(scale::power_law_envelope(p, 10), 0.5);
  EXPECT_DOUBLE_EQ(scale::power_law_envelope(ScalingParams::with_rate(0.5, 0.1, 3.0, 0), 0), 3.0);
  try {
    scale::power_law_envelope(ScalingParams::with_rate(0.0, 0.1, 1.0, 0), 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::BetaZero);
  }
}

TEST(Envelope, AsymptoticRate) {
  const auto p = ScalingParams::with_rate(2.0, 0.05, 1.0, 0);
  const double k = 1e12;
  EXPECT_NEAR(scale::power_law_envelope(p, k) / std::pow(2.0 * 0.05 * k, -0.5), 1.0, 1e-6);
}

TEST(Envelope, DominatesTheRecursion) {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int rep = 0; rep < 100; ++rep) {
    const double beta = 0.1 + 2.9 * u(rng), delta0 = 0.05 + 2 * u(rng);
    // keep c * delta0^beta < 1 so the iterates stay positive
    const double c = 0.95 * u(rng) / std::pow(delta0, beta);
    const auto p = ScalingParams::with_rate(beta, c, delta0, 200);
    const auto d = scale::run_recursion(p);
    for (std::size_t k = 0; k < d.size(); ++k) EXPECT_LE(d[k], scale::power_law_envelope(p, double(k)) * (1 + 1e-12));
  }
}

TEST(Envelope, MatchesDirectEvaluation) {
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int rep = 0; rep < 100; ++rep) {
    const auto p = ScalingParams::with_rate(0.05 + 3 * u(rng), u(rng), 0.01 + 5 * u(rng), 0);
    const double k = std::floor(1e6 * u(rng));
    EXPECT_LE(oracle::rel_err(scale::power_law_envelope(p, k), oracle::envelope(p.delta0, p.beta, p.c(), k)), 1e-12);
  }
}

TEST(Width, ClosedFormExamples) {
  const auto lin = scale::params_to_width(1000, {CouplingKind::Linear, 1, 0, 1});
  EXPECT_NEAR(lin.N, 10, 1e-12);
  EXPECT_NEAR(lin.L, 10, 1e-12);
  const auto poly = scale::params_to_width(32, {CouplingKind::Polynomial, 1, 0.5, 1});
  EXPECT_NEAR(poly.N, 4, 1e-12);
  EXPECT_NEAR(poly.L, 2, 1e-12);
}

TEST(Width, InvertsTheForwardMap) {
  for (const CouplingModel c : {CouplingModel{CouplingKind::Linear, 2.5, 0, 0.3},
                                CouplingModel{CouplingKind::Polynomial, 0.7, 0.4, 3.0}}) {
    for (double n0 : {1.5, 17.0, 1234.5}) {
      EXPECT_NEAR(scale::params_to_width(c.params(n0), c).N, n0, 1e-10 * n0);
      EXPECT_NEAR(scale::params_to_width_bisect(c.params(n0), c).N, n0, 1e-9 * n0);
    }
  }
}

TEST(Exponent, TableValues) {
  EXPECT_DOUBLE_EQ(scale::scaling_exponent(0, 1), 1.0 / 3.0);
  EXPECT_NEAR(scale::scaling_exponent(1 - 1e-12, 1), 0.0, 1e-12);
  EXPECT_DOUBLE_EQ(scale::scaling_exponent(0.5, 2), 0.1);
  std::mt19937_64 rng(14);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int rep = 0; rep < 100; ++rep) {
    const double nu = 0.99 * u(rng), beta = 0.05 + 3 * u(rng);
    EXPECT_LE(oracle::rel_err(scale::scaling_exponent(nu, beta), oracle::exponent(nu, beta)), 1e-12);
  }
}

TEST(Curve, LinearCouplingSlope) {
  const auto grid = scale::log_grid(1e9, 1e12, 31);
  const auto p = ScalingParams::with_rate(1.0, 0.5, 1.0, 0);
  const auto curve = scale::coupled_risk_curve(grid, {CouplingKind::Linear, 1, 0, 1}, p);
  EXPECT_NEAR(curve.fitted_slope, -1.0 / 3.0, 0.15 / 3.0);
  const auto p2 = ScalingParams::with_rate(2.0, 0.5, 1.0, 0);
  const auto curve2 = scale::coupled_risk_curve(grid, {CouplingKind::Linear, 1, 0, 1}, p2);
  EXPECT_NEAR(curve2.fitted_slope / curve.fitted_slope, 0.5, 0.05);
}

TEST(Curve, SinglePointIsAnError) {
  try {
    scale::coupled_risk_curve({1e9}, {}, ScalingParams::with_rate(1.0, 0.5, 1.0, 0));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InvalidArgument);
  }
}

TEST(Reliability, HandValueAndScaling) {
  const auto r = scale::reliability_constraint(1, 100, 100, 100, 1, 0.1);
  EXPECT_TRUE(r.satisfied);
  EXPECT_DOUBLE_EQ(r.lhs, 1.0);
  EXPECT_DOUBLE_EQ(r.rhs, 1000.0);
  EXPECT_DOUBLE_EQ(r.slack, 1000.0);
  EXPECT_FALSE(scale::reliability_constraint(1e6, 100, 100, 100, 1, 0.1).satisfied);
  EXPECT_DOUBLE_EQ(scale::reliability_constraint(1, 100, 200, 300, 1, 0.1).rhs, 2 * r.rhs);
}
