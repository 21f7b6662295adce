#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "resexp/io/json_io.hpp"
#include "resexp/netmodel/network.hpp"

namespace resexp::jump {

inline constexpr double kDescentTolerance = 1e-10;

struct GradientStats {
  std::size_t M = 0;
  std::size_t K = 0;
  nd::Tensor mu;  // train average of d loss / d z at the insertion layer
  nd::Tensor g;   // test average
  std::optional<nd::Tensor> per_sample_grads;  // (M, N) train gradients
  nd::Tensor sigma_diag;                       // coordinate variances, denominator M-1
  std::vector<double> offdiag_samples;         // sampled off-diagonal covariances
  double mu_norm_sq = 0.0;
  double g_norm_sq = 0.0;
  double mu_dot_g = 0.0;
};

struct StatsOptions {
  std::size_t offdiag_pairs = 1000;
  std::uint64_t seed = 0;
  bool keep_per_sample = true;
};

// Builds the statistics from per-sample gradient matrices (rows are samples).
GradientStats gradient_stats_from(const nd::Tensor& q_train, const nd::Tensor& q_test, const StatsOptions& opts = {});
GradientStats collect_gradient_stats(const net::NetworkSpec& spec, const net::NetworkState& state,
                                     const net::Dataset& train, const net::Dataset& test,
                                     const StatsOptions& opts = {});

struct Direction {
  nd::Tensor C;        // (N, m) mean of q_i psi_i^T
  nd::Tensor delta_v;  // -C
  double frob_sq = 0.0;
};

// C = (1/M) sum_i q_i psi_i^T. Throws NoDescentDirection when |C|_F < 1e-10.
Direction empirical_descent_direction(const nd::Tensor& q, const nd::Tensor& psi);
// Same construction on the network: q and psi_U0(z) evaluated on `data` at the insertion layer.
Direction descent_direction_on(const net::NetworkSpec& spec, const net::NetworkState& state,
                               const net::InsertedBlock& block, const net::Dataset& data);
// Population proxy: the construction on an estimation split disjoint from train and test.
Direction population_descent_direction(const net::NetworkSpec& spec, const net::NetworkState& state,
                                       const net::InsertedBlock& block, const net::Dataset& estimation);

struct LineSearchOptions {
  double eta0 = 0.1;
  double armijo = 1e-4;
  int max_halvings = 60;
};

struct LineSearchResult {
  double eta = 0.0;
  bool degenerate = false;  // no trial step decreased the objective
  double value0 = 0.0;
  double value = 0.0;
  int halvings = 0;
};

// Backtracking from eta0: accepts the first eta with G(eta) < G(0) and
// G(eta) <= G(0) + armijo * eta * slope. slope is G'(0) (< 0 for a descent direction).
LineSearchResult line_search_eta(const std::function<double(double)>& objective, double slope,
                                 const LineSearchOptions& opts = {});

// Largest eta keeping eta * delta_v inside the block's V caps.
double max_feasible_eta(const net::InsertedBlock& block, const nd::Tensor& delta_v);

struct ExpandedModel {
  net::NetworkState state;
  std::optional<net::InsertedBlock> block;

  const net::InsertedBlock* block_ptr() const { return block ? &*block : nullptr; }
};

double train_loss(const net::NetworkSpec& spec, const ExpandedModel& model, const net::Dataset& data);

struct JumpboardResult {
  ExpandedModel model;  // block with V = eta * delta_v
  LineSearchResult search;
};

// Line search of the train loss along V = eta * delta_v, starting from the block with V = 0.
JumpboardResult build_jumpboard(const net::NetworkSpec& spec, const net::NetworkState& state,
                                const net::InsertedBlock& block, const Direction& direction,
                                const net::Dataset& train, const LineSearchOptions& opts = {});

struct Selection {
  bool chose_alg = true;
  double loss_alg = 0.0;
  double loss_jump = 0.0;
  double loss_new = 0.0;
  double delta_erm = 0.0;
};

// Train-loss argmin over {alg, jump}; ties go to alg.
Selection select_by_loss(double loss_alg, double loss_jump);
std::pair<ExpandedModel, Selection> select_final_model(const net::NetworkSpec& spec, const ExpandedModel& f_alg,
                                                       const ExpandedModel& f_jump, const net::Dataset& train);

struct MarginReport {
  double L_train_old = 0.0, L_train_jump = 0.0, L_train_new = 0.0;
  double L_test_old = 0.0, L_test_jump = 0.0, L_test_new = 0.0;
  double delta_train_S = 0.0;  // L_train_old - L_train_jump
  double delta_R_test = 0.0;   // L_test_old - L_test_jump
  double delta_ERM = 0.0;      // L_train_jump - L_train_new
  // Population-proxy risks on a large held-out split, when measured.
  bool has_proxy = false;
  double R_old = 0.0, R_jump = 0.0, R_new = 0.0;
  double delta_R = 0.0;  // R_old - R_jump
};

MarginReport margins_from_losses(double train_old, double train_jump, double train_new, double test_old,
                                 double test_jump, double test_new);
MarginReport measure_margins(const net::NetworkSpec& spec, const ExpandedModel& f_old, const ExpandedModel& f_jump,
                             const ExpandedModel& f_new, const net::Dataset& train, const net::Dataset& test,
                             const net::Dataset* proxy = nullptr);

io::Json margin_report_to_json(const MarginReport& r);
MarginReport margin_report_from_json(const io::Json& j);

// eta * mu^T g: first-order prediction of the test margin when the block output realizes -eta*mu.
double first_order_test_margin(const GradientStats& stats, double eta);

}  // namespace resexp::jump
