#include "resexp/harness/config.hpp"

#include <cstdlib>

#include "resexp/error.hpp"

namespace resexp::harness {

using io::get_or;
using io::Json;

TaskConfig task_from_json(const Json& j) {
  io::require_known_keys(j,
                         {"kind", "classes", "input_dim", "separation", "noise_std", "teacher_width", "teacher_depth",
                          "M", "K", "M_proxy", "M_estimation", "seed"},
                         "task");
  TaskConfig t;
  t.kind = parse_task_kind(get_or<std::string>(j, "kind", std::string(to_string(t.kind))));
  t.classes = get_or(j, "classes", t.classes);
  t.input_dim = get_or(j, "input_dim", t.input_dim);
  t.separation = get_or(j, "separation", t.separation);
  t.noise_std = get_or(j, "noise_std", t.noise_std);
  t.teacher_width = get_or(j, "teacher_width", t.teacher_width);
  t.teacher_depth = get_or(j, "teacher_depth", t.teacher_depth);
  t.M = get_or(j, "M", t.M);
  t.K = get_or(j, "K", t.K);
  t.M_proxy = get_or(j, "M_proxy", t.M_proxy);
  t.M_estimation = get_or(j, "M_estimation", t.M_estimation);
  t.seed = get_or(j, "seed", t.seed);
  if (t.M == 0 || t.K == 0) throw Error(ErrorCode::ConfigError, "task: M and K must be positive");
  return t;
}

Json task_to_json(const TaskConfig& t) {
  return {{"kind", to_string(t.kind)},
          {"classes", t.classes},
          {"input_dim", t.input_dim},
          {"separation", t.separation},
          {"noise_std", t.noise_std},
          {"teacher_width", t.teacher_width},
          {"teacher_depth", t.teacher_depth},
          {"M", t.M},
          {"K", t.K},
          {"M_proxy", t.M_proxy},
          {"M_estimation", t.M_estimation},
          {"seed", t.seed}};
}

SgdConfig sgd_from_json(const Json& j, SgdConfig s) {
  io::require_known_keys(j, {"lr", "steps", "batch", "trace_every", "keep_best", "lr_schedule"}, "optimizer");
  s.lr = get_or(j, "lr", s.lr);
  s.steps = get_or(j, "steps", s.steps);
  s.batch = get_or(j, "batch", s.batch);
  s.trace_every = get_or(j, "trace_every", s.trace_every);
  s.keep_best = get_or(j, "keep_best", s.keep_best);
  const auto schedule = get_or<std::string>(j, "lr_schedule", s.linear_decay ? "linear" : "constant");
  if (schedule != "constant" && schedule != "linear") {
    throw Error(ErrorCode::ConfigError, "optimizer: lr_schedule must be 'constant' or 'linear'");
  }
  s.linear_decay = schedule == "linear";
  if (!(s.lr >= 0.0) || s.batch == 0) throw Error(ErrorCode::ConfigError, "optimizer: need lr >= 0 and batch > 0");
  return s;
}

Json sgd_to_json(const SgdConfig& s) {
  return {{"lr", s.lr}, {"steps", s.steps}, {"batch", s.batch}, {"trace_every", s.trace_every},
          {"keep_best", s.keep_best}, {"lr_schedule", s.linear_decay ? "linear" : "constant"}};
}

ExpansionConfig expansion_from_json(const Json& j) {
  io::require_known_keys(j,
                         {"insertion_layer", "feature", "feature_dim", "line_search", "finetune", "skip_finetune",
                          "joint_finetune", "delta", "rho", "offdiag_pairs"},
                         "expansion");
  ExpansionConfig c;
  c.insertion_layer = get_or(j, "insertion_layer", c.insertion_layer);
  c.feature = net::parse_feature_kind(get_or<std::string>(j, "feature", "relu_random"));
  c.feature_dim = get_or(j, "feature_dim", c.feature_dim);
  if (j.contains("line_search")) {
    const Json& ls = j.at("line_search");
    io::require_known_keys(ls, {"eta0", "armijo", "max_halvings"}, "expansion.line_search");
    c.line_search.eta0 = get_or(ls, "eta0", c.line_search.eta0);
    c.line_search.armijo = get_or(ls, "armijo", c.line_search.armijo);
    c.line_search.max_halvings = get_or(ls, "max_halvings", c.line_search.max_halvings);
  }
  if (j.contains("finetune")) c.finetune = sgd_from_json(j.at("finetune"), c.finetune);
  c.skip_finetune = get_or(j, "skip_finetune", c.skip_finetune);
  c.joint_finetune = get_or(j, "joint_finetune", c.joint_finetune);
  c.delta = get_or(j, "delta", c.delta);
  c.rho = get_or(j, "rho", c.rho);
  c.offdiag_pairs = get_or(j, "offdiag_pairs", c.offdiag_pairs);
  if (!(c.delta > 0.0 && c.delta < 1.0)) throw Error(ErrorCode::ConfigError, "expansion: delta must lie in (0, 1)");
  return c;
}

SweepConfig sweep_from_json(const Json& j) {
  io::require_known_keys(j, {"depths", "widths", "seeds", "optimizer"}, "sweep");
  SweepConfig s;
  s.depths = get_or(j, "depths", s.depths);
  s.widths = get_or(j, "widths", s.widths);
  s.seeds = get_or(j, "seeds", s.seeds);
  if (j.contains("optimizer")) s.optimizer = sgd_from_json(j.at("optimizer"), s.optimizer);
  s.validate();
  return s;
}

scale::CouplingModel coupling_from_json(const Json& j) {
  io::require_known_keys(j, {"kind", "kappa", "nu", "a_arch"}, "coupling");
  scale::CouplingModel c;
  const auto kind = get_or<std::string>(j, "kind", "linear");
  if (kind == "linear") {
    c.kind = scale::CouplingKind::Linear;
  } else if (kind == "polynomial") {
    c.kind = scale::CouplingKind::Polynomial;
  } else {
    throw Error(ErrorCode::ConfigError, "coupling: unknown kind '" + kind + "'");
  }
  c.kappa = get_or(j, "kappa", c.kappa);
  c.nu = get_or(j, "nu", c.nu);
  c.a_arch = get_or(j, "a_arch", c.a_arch);
  try {
    c.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::ConfigError, e.what());
  }
  return c;
}

align::SamplingMode sampling_mode_from_string(std::string_view s) {
  if (s == "averages") return align::SamplingMode::Averages;
  if (s == "per_sample") return align::SamplingMode::PerSample;
  throw Error(ErrorCode::ConfigError, "unknown sampling mode '" + std::string(s) + "'");
}

std::uint64_t resolve_seed(std::optional<std::uint64_t> flag, std::uint64_t config_value) {
  if (flag) return *flag;
  if (const char* env = std::getenv("RESEXP_SEED"); env != nullptr && *env != '\0') {
    try {
      std::size_t used = 0;
      const auto v = std::stoull(env, &used);
      if (used == std::string_view(env).size()) return v;
    } catch (const std::exception&) {
    }
    throw Error(ErrorCode::ConfigError, "RESEXP_SEED must be an unsigned integer");
  }
  return config_value;
}

}  // namespace resexp::harness
