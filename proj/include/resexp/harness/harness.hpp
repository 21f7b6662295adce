#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "resexp/certify/certify.hpp"
#include "resexp/jumpboard/jumpboard.hpp"
#include "resexp/netmodel/network.hpp"

namespace resexp::harness {

enum class TaskKind { GaussianMixture, TeacherRegression, IndependentNoise };

std::string_view to_string(TaskKind k);
TaskKind parse_task_kind(std::string_view s);

struct TaskConfig {
  TaskKind kind = TaskKind::GaussianMixture;
  std::size_t classes = 4;      // mixture classes
  std::size_t input_dim = 16;
  double separation = 2.0;      // distance between class means
  double noise_std = 0.1;       // regression label noise
  std::size_t teacher_width = 0;  // 0: same as the student width
  std::size_t teacher_depth = 1;
  std::size_t M = 2048;
  std::size_t K = 2048;
  std::size_t M_proxy = 20480;
  std::size_t M_estimation = 4096;  // disjoint split for the population jumpboard
  std::uint64_t seed = 0;
};

struct TaskData {
  net::Dataset train, test, proxy, estimation;
  double target_bound = 0.0;  // |y| bound for regression tasks
  // Independent-noise task: the student parameters that generated the labels.
  std::optional<net::NetworkState> teacher_state;
};

// Adjusts a network spec to the task (output dimension, loss, target bound) for width `width`.
net::NetworkSpec spec_for_task(const TaskConfig& task, net::NetworkSpec spec);
// Inputs are drawn in input_dim, clipped to the ball of radius spec.input_bound and
// embedded in R^width by zero padding (width >= input_dim) or truncation.
TaskData make_task(const TaskConfig& task, const net::NetworkSpec& spec);

struct SgdConfig {
  double lr = 0.1;
  std::size_t steps = 500;
  std::size_t batch = 64;
  std::size_t trace_every = 50;
  bool keep_best = true;  // return the traced iterate with the lowest train loss
  std::uint64_t seed = 0;
  bool linear_decay = false;  // lr * (1 - (step-1)/steps) instead of a constant rate
};

struct TrainResult {
  net::NetworkState state;
  std::vector<std::size_t> trace_steps;
  std::vector<double> trace_loss;
  double initial_loss = 0.0;
  double final_loss = 0.0;
};

// Minibatch SGD on all network parameters with projection onto the norm caps after every step.
// DivergedTraining on non-finite losses.
TrainResult train_base(const net::NetworkSpec& spec, const net::Dataset& train, const SgdConfig& opt,
                       std::uint64_t init_seed);
TrainResult train_base(const net::NetworkSpec& spec, const net::Dataset& train, const SgdConfig& opt,
                       net::NetworkState init);

// SGD on the inserted block's V (and the base parameters when joint), starting from `model`.
jump::ExpandedModel finetune_block(const net::NetworkSpec& spec, const jump::ExpandedModel& model,
                                   const net::Dataset& train, const SgdConfig& opt, bool joint = false);

struct ExpansionConfig {
  std::size_t insertion_layer = 0;
  net::FeatureKind feature = net::FeatureKind::ReluRandom;
  std::size_t feature_dim = 16;
  std::uint64_t seed = 0;
  jump::LineSearchOptions line_search;
  SgdConfig finetune{0.05, 200, 64, 50, true, 0};
  bool skip_finetune = false;
  bool joint_finetune = false;
  double delta = 0.05;
  double rho = 0.0;
  std::size_t offdiag_pairs = 1000;
};

struct ExpansionResult {
  net::NetworkSpec spec;  // with the insertion layer set
  bool no_direction = false;  // |C_S|_F below tolerance: no first-order descent direction
  bool degenerate = false;    // no direction, or the line search found no decreasing step
  double c_s_frob = 0.0;
  jump::GradientStats stats;
  jump::LineSearchResult search;
  jump::Selection selection;
  jump::MarginReport margins;    // empirical jumpboard
  jump::MarginReport margins_A;  // population jumpboard, proxy risks
  jump::LineSearchResult search_pop;
  bool degenerate_pop = false;
  net::ArchConstants constants_old, constants_new;
  cert::CertificateReport certificate;
  jump::ExpandedModel f_old, f_jump, f_new;
  double gap_old = 0.0;  // |L_train - R_proxy|
  double gap_new = 0.0;
};

ExpansionResult expansion_pipeline(const TaskData& task, const net::NetworkSpec& spec,
                                   const net::NetworkState& base, const ExpansionConfig& cfg);

io::Json expansion_to_json(const ExpansionResult& r);

struct SweepConfig {
  std::vector<std::size_t> depths{1, 2, 4, 8};
  std::vector<std::size_t> widths{16, 32};
  std::vector<std::uint64_t> seeds{0, 1};
  SgdConfig optimizer{0.1, 1500, 64, 50, true, 0, true};
  std::size_t workers = 1;
  void validate() const;
};

struct DecayRow {
  std::size_t depth = 0, width = 0;
  std::uint64_t seed = 0;
  double mu_norm = 0.0;
  double normalized = 0.0;
  double train_loss = 0.0;
};

struct DecaySummary {
  std::vector<DecayRow> rows;
  std::vector<double> depth_mean_normalized;  // per depth, averaged over widths and seeds
  double spearman_depth = 0.0;                // depth vs per-depth mean normalized |mu|
};

struct JointRow {
  std::size_t depth = 0, width = 0;
  std::uint64_t seed = 0;
  double train_loss = 0.0;
  double test_loss = 0.0;
};

struct JointCell {
  std::size_t depth = 0, width = 0, n_seeds = 0;
  double mean_train = 0.0, std_train = 0.0;
  double mean_test = 0.0, std_test = 0.0;
};

struct JointSummary {
  std::vector<JointRow> rows;
  std::vector<JointCell> cells;
};

// Journal of completed sweep cells (one JSON object per line). Re-running with the
// same journal skips completed cells; outputs are rebuilt from the journal in grid order.
struct SweepIo {
  std::optional<std::filesystem::path> journal;
};

DecaySummary gradient_decay_sweep(const SweepConfig& cfg, const TaskConfig& task, const net::NetworkSpec& base_spec,
                                  const SweepIo& io = {});
JointSummary joint_scaling_sweep(const SweepConfig& cfg, const TaskConfig& task, const net::NetworkSpec& base_spec,
                                 const SweepIo& io = {});

std::string decay_csv(const DecaySummary& s);
std::string joint_rows_csv(const JointSummary& s);
std::string joint_cells_csv(const JointSummary& s);

// Runs jobs 0..n-1 on up to `workers` threads; the first exception is rethrown after all workers stop.
void run_work_queue(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& job);

}  // namespace resexp::harness
