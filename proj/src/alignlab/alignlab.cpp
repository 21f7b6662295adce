#include "resexp/alignlab/alignlab.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <random>
#include <sstream>
#include <thread>

#include "resexp/error.hpp"
#include "resexp/ndcore/stats.hpp"

namespace resexp::align {

namespace {

constexpr std::size_t kBlockTrials = 4096;

Eigen::MatrixXd full_sigma(const AlignmentConfig& c) {
  const auto n = static_cast<Eigen::Index>(c.N);
  switch (c.sigma_kind) {
    case SigmaKind::ScaledIdentity: return c.tau_sq * Eigen::MatrixXd::Identity(n, n);
    case SigmaKind::Diagonal: {
      Eigen::MatrixXd s = Eigen::MatrixXd::Zero(n, n);
      for (Eigen::Index i = 0; i < n; ++i) s(i, i) = c.variances[static_cast<std::size_t>(i)];
      return s;
    }
    case SigmaKind::Full: {
      Eigen::MatrixXd s(n, n);
      for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j) s(i, j) = c.sigma(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
      return s;
    }
  }
  return {};
}

// Symmetric square root factor A with A A^T = Sigma.
Eigen::MatrixXd sigma_factor(const AlignmentConfig& c) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(full_sigma(c));
  Eigen::VectorXd sq = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * sq.asDiagonal() * es.eigenvectors().transpose();
}

// Per-coordinate standard deviations for the diagonal models.
std::vector<double> coordinate_sd(const AlignmentConfig& c) {
  std::vector<double> sd(c.N);
  for (std::size_t j = 0; j < c.N; ++j) {
    sd[j] = std::sqrt(c.sigma_kind == SigmaKind::ScaledIdentity ? c.tau_sq : c.variances[j]);
  }
  return sd;
}

struct Sampler {
  const AlignmentConfig& cfg;
  std::vector<double> sd;   // diagonal models
  Eigen::MatrixXd factor;   // full model

  explicit Sampler(const AlignmentConfig& c) : cfg(c) {
    if (c.sigma_kind == SigmaKind::Full) {
      factor = sigma_factor(c);
    } else {
      sd = coordinate_sd(c);
    }
  }

  // Draws one vector mu_bar + Sigma^{1/2} z * scale.
  void draw(std::mt19937_64& rng, std::normal_distribution<double>& nrm, double scale, Eigen::VectorXd& out,
            Eigen::VectorXd& z) const {
    const std::size_t n = cfg.N;
    if (cfg.sigma_kind == SigmaKind::Full) {
      for (std::size_t j = 0; j < n; ++j) z[static_cast<Eigen::Index>(j)] = nrm(rng);
      out.noalias() = factor * z;
      out *= scale;
      for (std::size_t j = 0; j < n; ++j) out[static_cast<Eigen::Index>(j)] += cfg.mu_bar[j];
    } else {
      for (std::size_t j = 0; j < n; ++j) out[static_cast<Eigen::Index>(j)] = cfg.mu_bar[j] + sd[j] * scale * nrm(rng);
    }
  }

  void average(std::mt19937_64& rng, std::normal_distribution<double>& nrm, std::size_t count, Eigen::VectorXd& out,
               Eigen::VectorXd& tmp, Eigen::VectorXd& z) const {
    if (cfg.mode == SamplingMode::Averages) {
      draw(rng, nrm, 1.0 / std::sqrt(static_cast<double>(count)), out, z);
      return;
    }
    out.setZero();
    for (std::size_t i = 0; i < count; ++i) {
      draw(rng, nrm, 1.0, tmp, z);
      out += tmp;
    }
    out /= static_cast<double>(count);
  }

  std::size_t run_block(std::uint64_t seed, std::size_t trials) const {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nrm(0.0, 1.0);
    const auto n = static_cast<Eigen::Index>(cfg.N);
    Eigen::VectorXd mu(n), g(n), tmp(n), z(n);
    std::size_t fails = 0;
    for (std::size_t t = 0; t < trials; ++t) {
      average(rng, nrm, cfg.M, mu, tmp, z);
      average(rng, nrm, cfg.K, g, tmp, z);
      if (mu.dot(g) <= 0.0) ++fails;
    }
    return fails;
  }
};

}  // namespace

AlignmentConfig AlignmentConfig::uniform(std::size_t N, std::size_t M, std::size_t K, double alpha, double tau_sq) {
  AlignmentConfig c;
  c.N = N;
  c.M = M;
  c.K = K;
  c.mu_bar.assign(N, alpha);
  c.sigma_kind = SigmaKind::ScaledIdentity;
  c.tau_sq = tau_sq;
  c.C_sigma = 1.0;
  return c;
}

double AlignmentConfig::trace_sigma() const {
  switch (sigma_kind) {
    case SigmaKind::ScaledIdentity: return tau_sq * static_cast<double>(N);
    case SigmaKind::Diagonal: {
      double t = 0.0;
      for (double v : variances) t += v;
      return t;
    }
    case SigmaKind::Full: {
      double t = 0.0;
      for (std::size_t i = 0; i < N; ++i) t += sigma(i, i);
      return t;
    }
  }
  return 0.0;
}

double AlignmentConfig::lambda_max_sigma() const {
  switch (sigma_kind) {
    case SigmaKind::ScaledIdentity: return tau_sq;
    case SigmaKind::Diagonal: return *std::max_element(variances.begin(), variances.end());
    case SigmaKind::Full: {
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(full_sigma(*this), Eigen::EigenvaluesOnly);
      return es.eigenvalues().maxCoeff();
    }
  }
  return 0.0;
}

double AlignmentConfig::mu_bar_sq() const {
  double s = 0.0;
  for (double v : mu_bar) s += v * v;
  return s;
}

void AlignmentConfig::validate() const {
  auto bad = [](const std::string& m) { throw Error(ErrorCode::InvalidCovariance, m); };
  if (N == 0 || M == 0 || K == 0) throw Error(ErrorCode::InvalidArgument, "N, M, K must be positive");
  if (trials == 0) throw Error(ErrorCode::InvalidArgument, "trials must be positive");
  if (mu_bar.size() != N) throw Error(ErrorCode::InvalidArgument, "mu_bar must have N entries");
  if (!(tau_sq > 0.0) || !(C_sigma > 0.0)) bad("tau_sq and C_sigma must be positive");
  double max_diag = 0.0;
  if (sigma_kind == SigmaKind::Diagonal) {
    if (variances.size() != N) bad("diagonal model needs N variances");
    for (double v : variances) {
      if (!(v >= 0.0)) bad("variances must be nonnegative");
      max_diag = std::max(max_diag, v);
    }
  } else if (sigma_kind == SigmaKind::Full) {
    if (sigma.rank() != 2 || sigma.rows() != N || sigma.cols() != N) bad("full model needs an N x N matrix");
    for (std::size_t i = 0; i < N; ++i) {
      max_diag = std::max(max_diag, sigma(i, i));
      for (std::size_t j = 0; j < i; ++j) {
        if (std::abs(sigma(i, j) - sigma(j, i)) > 1e-12 * std::max(1.0, std::abs(sigma(i, j)))) bad("Sigma not symmetric");
      }
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(full_sigma(*this), Eigen::EigenvaluesOnly);
    if (es.eigenvalues().minCoeff() < -1e-10 * std::max(1.0, es.eigenvalues().maxCoeff())) bad("Sigma not PSD");
  } else {
    max_diag = tau_sq;
  }
  const double slack = 1e-12 * std::max(1.0, C_sigma * tau_sq);
  if (lambda_max_sigma() > C_sigma * tau_sq + slack) bad("lambda_max(Sigma) exceeds C_sigma * tau_sq");
  if (max_diag > tau_sq + slack) bad("tau_sq below the largest coordinate variance");
}

AlignmentBoundTerms theorem2_bound(const AlignmentConfig& cfg) {
  const double mu2 = cfg.mu_bar_sq();
  if (!(mu2 > 0.0)) throw Error(ErrorCode::ZeroMeanSignal, "|mu_bar| = 0; alignment bound undefined");
  const double a = 4.0 * cfg.C_sigma * cfg.tau_sq;
  const double M = static_cast<double>(cfg.M), K = static_cast<double>(cfg.K);
  AlignmentBoundTerms t;
  t.train = a / (M * mu2);
  t.test = a / (K * mu2);
  t.mixed = a * cfg.trace_sigma() / (K * M * mu2 * mu2);
  t.total = t.train + t.test + t.mixed;
  return t;
}

AlignmentResult simulate_alignment(const AlignmentConfig& cfg) {
  cfg.validate();
  AlignmentResult r;
  r.trials = cfg.trials;
  const Sampler sampler(cfg);
  const std::size_t blocks = (cfg.trials + kBlockTrials - 1) / kBlockTrials;
  std::vector<std::size_t> counts(blocks, 0);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t b = next++; b < blocks; b = next++) {
      const std::size_t n = std::min(kBlockTrials, cfg.trials - b * kBlockTrials);
      counts[b] = sampler.run_block(nd::substream_seed(cfg.seed, b), n);
    }
  };
  const std::size_t workers = std::max<std::size_t>(1, std::min(cfg.workers, blocks));
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (std::size_t c : counts) r.failures += c;
  r.empirical_fail_rate = static_cast<double>(r.failures) / static_cast<double>(r.trials);
  r.wilson_ci_upper = nd::wilson_upper(r.failures, r.trials);
  if (cfg.mu_bar_sq() > 0.0) {
    const auto t = theorem2_bound(cfg);
    r.has_bound = true;
    r.theorem2_bound = t.total;
    r.term_train = t.train;
    r.term_test = t.test;
    r.term_mixed = t.mixed;
    r.dominance_ok = !(t.total < 1.0) || r.wilson_ci_upper <= t.total;
  }
  return r;
}

std::string alignment_csv_header() {
  return "N,M,K,mu_bar_sq,tau_sq,C_sigma,trials,failures,empirical_rate,wilson_upper,bound,term_train,term_test,"
         "term_mixed";
}

std::string alignment_csv_row(const AlignmentConfig& cfg, const AlignmentResult& r) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%zu,%zu,%zu,%.17g,%.17g,%.17g,%zu,%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g", cfg.N,
                cfg.M, cfg.K, cfg.mu_bar_sq(), cfg.tau_sq, cfg.C_sigma, r.trials, r.failures, r.empirical_fail_rate,
                r.wilson_ci_upper, r.has_bound ? r.theorem2_bound : std::nan(""), r.term_train, r.term_test,
                r.term_mixed);
  return buf;
}

CovarianceDiagnostics covariance_diagnostics(const nd::Tensor& q, const CovarianceOptions& opts) {
  if (q.rank() != 2 || q.rows() < 2) throw Error(ErrorCode::InvalidArgument, "covariance diagnostics need M >= 2");
  const std::size_t M = q.rows(), N = q.cols();
  CovarianceDiagnostics d;
  const nd::Tensor mean = nd::row_mean(q);
  d.sigma_diag = nd::column_variances(q);
  std::mt19937_64 rng(opts.seed);
  const auto pairs = nd::sample_index_pairs(N, opts.pair_samples, rng);
  d.offdiag.reserve(pairs.size());
  std::size_t within = 0;
  double max_off = 0.0;
  for (const auto& [j, k] : pairs) {
    const double c = nd::column_covariance(q, mean.data(), j, k);
    d.offdiag.push_back(c);
    max_off = std::max(max_off, std::abs(c));
    const double band = std::sqrt(d.sigma_diag[j] * d.sigma_diag[k] / static_cast<double>(M - 1));
    if (std::abs(c) <= 3.0 * band) ++within;
  }
  double max_diag = 0.0;
  for (double v : d.sigma_diag.data()) max_diag = std::max(max_diag, v);
  d.ratio = max_diag > 0.0 ? max_off / max_diag : 0.0;
  d.within_noise_fraction = d.offdiag.empty() ? 1.0 : static_cast<double>(within) / static_cast<double>(d.offdiag.size());

  const std::size_t bins = std::max<std::size_t>(1, opts.bins);
  const double edge = max_off > 0.0 ? max_off : 1.0;
  d.hist_counts.assign(bins, 0);
  for (std::size_t b = 0; b <= bins; ++b) {
    d.hist_edges.push_back(-edge + 2.0 * edge * static_cast<double>(b) / static_cast<double>(bins));
  }
  for (double c : d.offdiag) {
    auto b = static_cast<std::size_t>((c + edge) / (2.0 * edge) * static_cast<double>(bins));
    d.hist_counts[std::min(b, bins - 1)]++;
  }

  std::vector<std::size_t> rows(N);
  for (std::size_t j = 0; j < N; ++j) rows[j] = j;
  if (opts.row_samples < N) {
    std::shuffle(rows.begin(), rows.end(), rng);
    rows.resize(opts.row_samples);
    std::sort(rows.begin(), rows.end());
  }
  for (std::size_t j : rows) {
    double s = d.sigma_diag[j];
    for (std::size_t k = 0; k < N; ++k) {
      if (k != j) s += std::abs(nd::column_covariance(q, mean.data(), j, k));
    }
    d.gershgorin_estimate = std::max(d.gershgorin_estimate, s);
  }
  return d;
}

}  // namespace resexp::align
