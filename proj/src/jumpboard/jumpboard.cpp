#include "resexp/jumpboard/jumpboard.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "resexp/error.hpp"
#include "resexp/ndcore/stats.hpp"

namespace resexp::jump {

GradientStats gradient_stats_from(const nd::Tensor& q_train, const nd::Tensor& q_test, const StatsOptions& opts) {
  if (q_train.rank() != 2 || q_test.rank() != 2) throw Error(ErrorCode::EmptyDataset, "gradient matrices required");
  if (q_train.cols() != q_test.cols()) throw Error(ErrorCode::ShapeMismatch, "train/test gradient widths differ");
  GradientStats s;
  s.M = q_train.rows();
  s.K = q_test.rows();
  s.mu = nd::row_mean(q_train);
  s.g = nd::row_mean(q_test);
  s.sigma_diag = nd::column_variances(q_train);
  std::mt19937_64 rng(opts.seed);
  const auto pairs = nd::sample_index_pairs(q_train.cols(), opts.offdiag_pairs, rng);
  s.offdiag_samples.reserve(pairs.size());
  for (const auto& [j, k] : pairs) s.offdiag_samples.push_back(nd::column_covariance(q_train, s.mu.data(), j, k));
  s.mu_norm_sq = s.mu.squared_norm();
  s.g_norm_sq = s.g.squared_norm();
  s.mu_dot_g = nd::dot(s.mu, s.g);
  if (opts.keep_per_sample) s.per_sample_grads = q_train;
  return s;
}

GradientStats collect_gradient_stats(const net::NetworkSpec& spec, const net::NetworkState& state,
                                     const net::Dataset& train, const net::Dataset& test, const StatsOptions& opts) {
  if (train.empty() || test.empty()) throw Error(ErrorCode::EmptyDataset, "collect_gradient_stats");
  const auto tr = net::activation_gradients(spec, state, train);
  const auto te = net::activation_gradients(spec, state, test);
  return gradient_stats_from(tr.q, te.q, opts);
}

Direction empirical_descent_direction(const nd::Tensor& q, const nd::Tensor& psi) {
  if (q.rank() != 2 || psi.rank() != 2 || q.rows() != psi.rows()) {
    throw Error(ErrorCode::ShapeMismatch, "q and psi need matching sample rows");
  }
  const std::size_t M = q.rows(), N = q.cols(), m = psi.cols();
  Direction d;
  d.C = nd::Tensor({N, m});
  for (std::size_t i = 0; i < M; ++i) {
    const auto qi = q.row(i);
    const auto pi = psi.row(i);
    for (std::size_t a = 0; a < N; ++a) {
      if (qi[a] == 0.0) continue;
      for (std::size_t b = 0; b < m; ++b) d.C(a, b) += qi[a] * pi[b];
    }
  }
  d.C *= 1.0 / static_cast<double>(M);
  d.frob_sq = d.C.squared_norm();
  if (!(std::sqrt(d.frob_sq) >= kDescentTolerance)) {
    throw Error(ErrorCode::NoDescentDirection,
                "|C_S|_F = " + std::to_string(std::sqrt(d.frob_sq)) + " below tolerance; no first-order descent");
  }
  d.delta_v = d.C * -1.0;
  return d;
}

Direction descent_direction_on(const net::NetworkSpec& spec, const net::NetworkState& state,
                               const net::InsertedBlock& block, const net::Dataset& data) {
  if (data.empty()) throw Error(ErrorCode::EmptyDataset, "descent direction on empty data");
  const auto ag = net::activation_gradients(spec, state, data);
  return empirical_descent_direction(ag.q, block.features(ag.z));
}

Direction population_descent_direction(const net::NetworkSpec& spec, const net::NetworkState& state,
                                       const net::InsertedBlock& block, const net::Dataset& estimation) {
  return descent_direction_on(spec, state, block, estimation);
}

LineSearchResult line_search_eta(const std::function<double(double)>& objective, double slope,
                                 const LineSearchOptions& opts) {
  LineSearchResult r;
  r.value0 = objective(0.0);
  r.value = r.value0;
  if (!(slope < 0.0) || !(opts.eta0 > 0.0)) {
    r.degenerate = true;
    return r;
  }
  double eta = opts.eta0;
  for (int h = 0; h <= opts.max_halvings; ++h, eta *= 0.5) {
    const double v = objective(eta);
    if (std::isfinite(v) && v < r.value0 && v <= r.value0 + opts.armijo * eta * slope) {
      r.eta = eta;
      r.value = v;
      r.halvings = h;
      return r;
    }
  }
  r.degenerate = true;
  r.halvings = opts.max_halvings;
  return r;
}

double max_feasible_eta(const net::InsertedBlock& block, const nd::Tensor& delta_v) {
  const double sig = net::spectral_norm(delta_v);
  const double fro = delta_v.norm();
  double eta = std::numeric_limits<double>::infinity();
  if (sig > 0.0) eta = std::min(eta, block.v_sigma_cap / sig);
  if (fro > 0.0) eta = std::min(eta, block.v_frob_cap / fro);
  return eta;
}

double train_loss(const net::NetworkSpec& spec, const ExpandedModel& model, const net::Dataset& data) {
  return net::mean_loss(spec, model.state, model.block_ptr(), data);
}

JumpboardResult build_jumpboard(const net::NetworkSpec& spec, const net::NetworkState& state,
                                const net::InsertedBlock& block, const Direction& direction,
                                const net::Dataset& train, const LineSearchOptions& opts) {
  if (direction.delta_v.shape() != block.v.shape()) {
    throw Error(ErrorCode::ShapeMismatch, "direction shape " + nd::shape_string(direction.delta_v.shape()) +
                                              " vs V " + nd::shape_string(block.v.shape()));
  }
  net::InsertedBlock trial = block;
  auto objective = [&](double eta) {
    trial.v = direction.delta_v * eta;
    return net::mean_loss(spec, state, &trial, train);
  };
  LineSearchOptions o = opts;
  o.eta0 = std::min(opts.eta0, max_feasible_eta(block, direction.delta_v));
  JumpboardResult out;
  out.search = line_search_eta(objective, -direction.frob_sq, o);
  out.model.state = state;
  out.model.block = block;
  out.model.block->v = direction.delta_v * out.search.eta;
  return out;
}

Selection select_by_loss(double loss_alg, double loss_jump) {
  Selection s;
  s.loss_alg = loss_alg;
  s.loss_jump = loss_jump;
  s.chose_alg = loss_alg <= loss_jump;
  s.loss_new = s.chose_alg ? loss_alg : loss_jump;
  s.delta_erm = loss_jump - s.loss_new;
  return s;
}

std::pair<ExpandedModel, Selection> select_final_model(const net::NetworkSpec& spec, const ExpandedModel& f_alg,
                                                       const ExpandedModel& f_jump, const net::Dataset& train) {
  const Selection s = select_by_loss(train_loss(spec, f_alg, train), train_loss(spec, f_jump, train));
  return {s.chose_alg ? f_alg : f_jump, s};
}

MarginReport margins_from_losses(double train_old, double train_jump, double train_new, double test_old,
                                 double test_jump, double test_new) {
  MarginReport r;
  r.L_train_old = train_old;
  r.L_train_jump = train_jump;
  r.L_train_new = train_new;
  r.L_test_old = test_old;
  r.L_test_jump = test_jump;
  r.L_test_new = test_new;
  r.delta_train_S = train_old - train_jump;
  r.delta_R_test = test_old - test_jump;
  r.delta_ERM = train_jump - train_new;
  return r;
}

MarginReport measure_margins(const net::NetworkSpec& spec, const ExpandedModel& f_old, const ExpandedModel& f_jump,
                             const ExpandedModel& f_new, const net::Dataset& train, const net::Dataset& test,
                             const net::Dataset* proxy) {
  MarginReport r = margins_from_losses(train_loss(spec, f_old, train), train_loss(spec, f_jump, train),
                                       train_loss(spec, f_new, train), train_loss(spec, f_old, test),
                                       train_loss(spec, f_jump, test), train_loss(spec, f_new, test));
  if (proxy != nullptr) {
    r.has_proxy = true;
    r.R_old = train_loss(spec, f_old, *proxy);
    r.R_jump = train_loss(spec, f_jump, *proxy);
    r.R_new = train_loss(spec, f_new, *proxy);
    r.delta_R = r.R_old - r.R_jump;
  }
  return r;
}

io::Json margin_report_to_json(const MarginReport& r) {
  io::Json j{{"L_train_old", r.L_train_old},   {"L_train_jump", r.L_train_jump}, {"L_train_new", r.L_train_new},
             {"L_test_old", r.L_test_old},     {"L_test_jump", r.L_test_jump},   {"L_test_new", r.L_test_new},
             {"delta_train_S", r.delta_train_S}, {"delta_R_test", r.delta_R_test}, {"delta_ERM", r.delta_ERM},
             {"has_proxy", r.has_proxy}};
  if (r.has_proxy) {
    j["R_old"] = r.R_old;
    j["R_jump"] = r.R_jump;
    j["R_new"] = r.R_new;
    j["delta_R"] = r.delta_R;
  }
  return j;
}

MarginReport margin_report_from_json(const io::Json& j) {
  MarginReport r;
  const char* ctx = "margins";
  r.L_train_old = io::get_required<double>(j, "L_train_old", ctx);
  r.L_train_jump = io::get_required<double>(j, "L_train_jump", ctx);
  r.L_train_new = io::get_required<double>(j, "L_train_new", ctx);
  r.L_test_old = io::get_required<double>(j, "L_test_old", ctx);
  r.L_test_jump = io::get_required<double>(j, "L_test_jump", ctx);
  r.L_test_new = io::get_required<double>(j, "L_test_new", ctx);
  r.delta_train_S = io::get_required<double>(j, "delta_train_S", ctx);
  r.delta_R_test = io::get_required<double>(j, "delta_R_test", ctx);
  r.delta_ERM = io::get_required<double>(j, "delta_ERM", ctx);
  r.has_proxy = io::get_or(j, "has_proxy", false);
  if (r.has_proxy) {
    r.R_old = io::get_required<double>(j, "R_old", ctx);
    r.R_jump = io::get_required<double>(j, "R_jump", ctx);
    r.R_new = io::get_required<double>(j, "R_new", ctx);
    r.delta_R = io::get_required<double>(j, "delta_R", ctx);
  }
  return r;
}

double first_order_test_margin(const GradientStats& stats, double eta) { return eta * stats.mu_dot_g; }

}  // namespace resexp::jump
