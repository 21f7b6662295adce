#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "resexp/ndcore/tensor.hpp"

namespace resexp::align {

enum class SigmaKind { Diagonal, ScaledIdentity, Full };

enum class SamplingMode {
  // Draws mu ~ N(mu_bar, Sigma/M) and g ~ N(mu_bar, Sigma/K) directly: for Gaussian
  // gradients these are exactly the laws of the train and test averages.
  Averages,
  // Draws all M + K gradient vectors and averages them.
  PerSample,
};

struct AlignmentConfig {
  std::size_t N = 16;
  std::size_t M = 64;
  std::size_t K = 64;
  std::vector<double> mu_bar;       // length N
  SigmaKind sigma_kind = SigmaKind::ScaledIdentity;
  std::vector<double> variances;    // Diagonal: length N
  nd::Tensor sigma;                 // Full: (N, N) symmetric PSD
  double C_sigma = 1.0;
  double tau_sq = 1.0;
  std::size_t trials = 100000;
  std::uint64_t seed = 0;
  SamplingMode mode = SamplingMode::Averages;
  std::size_t workers = 1;

  // Uniformly active signal mu_bar = alpha * (1, ..., 1) with Sigma = tau_sq * I.
  static AlignmentConfig uniform(std::size_t N, std::size_t M, std::size_t K, double alpha, double tau_sq = 1.0);

  // InvalidCovariance unless lambda_max(Sigma) <= C_sigma * tau_sq and tau_sq >= max_j Sigma_jj.
  void validate() const;
  double trace_sigma() const;
  double lambda_max_sigma() const;
  double mu_bar_sq() const;
};

struct AlignmentBoundTerms {
  double train = 0.0;  // 4 C tau^2 / (M |mu_bar|^2)
  double test = 0.0;   // 4 C tau^2 / (K |mu_bar|^2)
  double mixed = 0.0;  // 4 C tau^2 tr(Sigma) / (K M |mu_bar|^4)
  double total = 0.0;
};

// ZeroMeanSignal when mu_bar = 0.
AlignmentBoundTerms theorem2_bound(const AlignmentConfig& cfg);

struct AlignmentResult {
  std::size_t failures = 0;
  std::size_t trials = 0;
  double empirical_fail_rate = 0.0;
  double wilson_ci_upper = 0.0;
  bool has_bound = false;
  double theorem2_bound = 0.0;
  double term_train = 0.0, term_test = 0.0, term_mixed = 0.0;
  // Wilson upper <= bound whenever the bound is below 1 (true when there is no bound).
  bool dominance_ok = true;
};

// Monte Carlo estimate of P(mu^T g <= 0). Trials are split into fixed blocks with
// their own RNG streams, so counts do not depend on cfg.workers.
AlignmentResult simulate_alignment(const AlignmentConfig& cfg);

std::string alignment_csv_header();
std::string alignment_csv_row(const AlignmentConfig& cfg, const AlignmentResult& r);

struct CovarianceDiagnostics {
  nd::Tensor sigma_diag;
  std::vector<double> offdiag;         // sampled entries
  std::vector<double> hist_edges;      // bins + 1 edges
  std::vector<std::size_t> hist_counts;
  double ratio = 0.0;                  // max |offdiag| / max diag
  double gershgorin_estimate = 0.0;    // max over sampled rows of Sigma_jj + sum_k |Sigma_jk|
  double within_noise_fraction = 0.0;  // share of sampled entries with |c_jk| <= 3 sqrt(s_jj s_kk / (M-1))
};

struct CovarianceOptions {
  std::size_t pair_samples = 100000;
  std::size_t row_samples = 64;
  std::size_t bins = 41;
  std::uint64_t seed = 0;
};

CovarianceDiagnostics covariance_diagnostics(const nd::Tensor& per_sample_grads, const CovarianceOptions& opts = {});

}  // namespace resexp::align
