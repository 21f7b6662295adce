#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "resexp/alignlab/alignlab.hpp"
#include "resexp/error.hpp"
#include "resexp/ndcore/stats.hpp"

using namespace resexp;
using align::AlignmentConfig;
using nd::Tensor;

TEST(AlignmentBound, HandValue) {
  const auto cfg = AlignmentConfig::uniform(10, 100, 100, 1.0, 1.0);
  const auto t = align::theorem2_bound(cfg);
  EXPECT_NEAR(t.train, 0.004, 1e-15);
  EXPECT_NEAR(t.test, 0.004, 1e-15);
  EXPECT_NEAR(t.mixed, 0.00004, 1e-16);
  EXPECT_NEAR(t.total, 0.00804, 1e-15);
}

TEST(AlignmentBound, VanishesWithSignalAndHalvesWithWidth) {
  EXPECT_LT(align::theorem2_bound(AlignmentConfig::uniform(10, 100, 100, 1e4)).total, 1e-9);
  for (std::size_t N : {4, 16, 64}) {
    const double a = align::theorem2_bound(AlignmentConfig::uniform(N, 50, 80, 0.3)).total;
    const double b = align::theorem2_bound(AlignmentConfig::uniform(2 * N, 50, 80, 0.3)).total;
    EXPECT_NEAR(b, a / 2, 1e-15 * a);
  }
}

TEST(AlignmentBound, MatchesDirectEvaluation) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int rep = 0; rep < 100; ++rep) {
    AlignmentConfig cfg;
    cfg.N = 1 + rep % 40;
    cfg.M = 1 + static_cast<std::size_t>(1000 * u(rng));
    cfg.K = 1 + static_cast<std::size_t>(1000 * u(rng));
    cfg.mu_bar.resize(cfg.N);
    for (double& v : cfg.mu_bar) v = u(rng) - 0.3;
    cfg.sigma_kind = align::SigmaKind::Diagonal;
    cfg.variances.resize(cfg.N);
    for (double& v : cfg.variances) v = 0.1 + u(rng);
    cfg.tau_sq = 1.2;
    cfg.C_sigma = 1.0 + u(rng);
    const double trace = cfg.trace_sigma();
    EXPECT_LE(oracle::rel_err(align::theorem2_bound(cfg).total,
                              oracle::chebyshev_alignment(cfg.C_sigma, cfg.tau_sq, double(cfg.M), double(cfg.K),
                                                          cfg.mu_bar_sq(), trace)),
              1e-12);
  }
}

TEST(AlignmentBound, ZeroMeanIsRejected) {
  auto cfg = AlignmentConfig::uniform(4, 10, 10, 0.0);
  try {
    align::theorem2_bound(cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ZeroMeanSignal);
  }
}

TEST(Covariance, AssumptionsAreValidated) {
  AlignmentConfig cfg = AlignmentConfig::uniform(2, 10, 10, 1.0);
  cfg.sigma_kind = align::SigmaKind::Full;
  cfg.sigma = Tensor::matrix({{1, 0.9}, {0.9, 1}});
  cfg.C_sigma = 1.0;
  try {
    cfg.validate();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InvalidCovariance);
  }
  cfg.C_sigma = 1.9;
  EXPECT_NO_THROW(cfg.validate());
  EXPECT_NEAR(cfg.lambda_max_sigma(), 1.9, 1e-12);
}

TEST(Simulation, ZeroMeanFailsHalfTheTime) {
  auto cfg = AlignmentConfig::uniform(8, 16, 16, 0.0);
  cfg.trials = 40000;
  const auto r = align::simulate_alignment(cfg);
  EXPECT_FALSE(r.has_bound);
  EXPECT_NEAR(r.empirical_fail_rate, 0.5, 0.01);
}

TEST(Simulation, LargeSignalNeverFails) {
  auto cfg = AlignmentConfig::uniform(8, 16, 16, 10.0);  // |mu_bar|^2 = 100 N
  cfg.trials = 100000;
  EXPECT_EQ(align::simulate_alignment(cfg).failures, 0u);
}

TEST(Simulation, WiderIsMoreReliable) {
  auto a = AlignmentConfig::uniform(8, 16, 16, 0.2);
  auto b = AlignmentConfig::uniform(16, 16, 16, 0.2);
  a.trials = b.trials = 100000;
  EXPECT_GT(align::simulate_alignment(a).empirical_fail_rate, align::simulate_alignment(b).empirical_fail_rate);
}

TEST(Simulation, CountsDoNotDependOnWorkers) {
  auto cfg = AlignmentConfig::uniform(6, 20, 30, 0.3);
  cfg.trials = 30000;
  cfg.seed = 17;
  const auto one = align::simulate_alignment(cfg);
  cfg.workers = 3;
  EXPECT_EQ(align::simulate_alignment(cfg).failures, one.failures);
}

TEST(Simulation, PerSampleModeAgreesWithAverages) {
  auto cfg = AlignmentConfig::uniform(4, 8, 8, 0.4);
  cfg.trials = 20000;
  const auto avg = align::simulate_alignment(cfg);
  cfg.mode = align::SamplingMode::PerSample;
  const auto per = align::simulate_alignment(cfg);
  const double p = avg.empirical_fail_rate;
  EXPECT_NEAR(per.empirical_fail_rate, p, 5 * std::sqrt(2 * p * (1 - p) / 20000));
}

TEST(Simulation, CsvRow) {
  auto cfg = AlignmentConfig::uniform(4, 8, 8, 1.0);
  cfg.trials = 1000;
  const auto r = align::simulate_alignment(cfg);
  const std::string header = align::alignment_csv_header();
  const std::string row = align::alignment_csv_row(cfg, r);
  EXPECT_EQ(std::count(header.begin(), header.end(), ','), std::count(row.begin(), row.end(), ','));
  EXPECT_EQ(header.rfind("N,M,K,", 0), 0u);
}

TEST(CovarianceDiagnostics, IndependentCoordinatesConcentrateAtZero) {
  std::mt19937_64 rng(10);
  const Tensor q = oracle::random_tensor({2000, 30}, rng);
  const auto d = align::covariance_diagnostics(q, {435, 30, 21, 1});
  EXPECT_EQ(d.offdiag.size(), 435u);
  EXPECT_GE(d.within_noise_fraction, 0.95);
  EXPECT_LT(d.ratio, 0.2);
  std::size_t total = 0;
  for (auto c : d.hist_counts) total += c;
  EXPECT_EQ(total, d.offdiag.size());
}

TEST(CovarianceDiagnostics, RankOneGradientsAreFlagged) {
  std::mt19937_64 rng(11);
  const std::size_t M = 500, N = 10;
  std::normal_distribution<double> n(0.0, 1.0);
  Tensor q({M, N});
  for (std::size_t i = 0; i < M; ++i) {
    const double a = n(rng);
    for (std::size_t j = 0; j < N; ++j) q(i, j) = a * (1.0 + 0.1 * j);
  }
  const auto d = align::covariance_diagnostics(q, {45, 10, 11, 0});
  EXPECT_GT(d.ratio, 0.8);
  EXPECT_LT(d.within_noise_fraction, 0.05);
  // c_jk / sqrt(c_jj c_kk) = 1 for rank one
  const Tensor var = nd::column_variances(q);
  const Tensor mean = nd::row_mean(q);
  EXPECT_NEAR(nd::column_covariance(q, mean.data(), 2, 7), std::sqrt(var[2] * var[7]), 1e-10);
}

TEST(CovarianceDiagnostics, DuplicatedDatasetAdjustsTheDenominator) {
  const Tensor q = Tensor::matrix({{1, 2}, {3, -1}, {-2, 0.5}});
  const Tensor dup = Tensor::matrix({{1, 2}, {3, -1}, {-2, 0.5}, {1, 2}, {3, -1}, {-2, 0.5}});
  const Tensor v = nd::column_variances(q), vd = nd::column_variances(dup);
  const Tensor m = nd::row_mean(q), md = nd::row_mean(dup);
  EXPECT_EQ(m, md);
  // sum of squares doubles: vd (2n-1) = 2 v (n-1)
  for (std::size_t j = 0; j < 2; ++j) EXPECT_NEAR(vd[j] * 5.0, 2.0 * v[j] * 2.0, 1e-14);
  EXPECT_NEAR(nd::column_covariance(dup, md.data(), 0, 1) * 5.0, 2.0 * nd::column_covariance(q, m.data(), 0, 1) * 2.0,
              1e-14);
}
