// resexp: command-line entry point for the depth-expansion laboratory.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "resexp/alignlab/alignlab.hpp"
#include "resexp/certify/certify.hpp"
#include "resexp/error.hpp"
#include "resexp/harness/config.hpp"
#include "resexp/harness/harness.hpp"
#include "resexp/io/json_io.hpp"
#include "resexp/ndcore/stats.hpp"
#include "resexp/netmodel/serialize.hpp"
#include "resexp/scalelab/scalelab.hpp"
#include "resexp/version.hpp"

namespace fs = std::filesystem;
using resexp::Error;
using resexp::ErrorCode;
using resexp::io::Json;
namespace io = resexp::io;
namespace net = resexp::net;
namespace harness = resexp::harness;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitDiverged = 3;
constexpr int kExitDegenerate = 4;

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

struct Run {
  std::string command;
  fs::path config_path;
  std::string config_text;
  Json config;
  fs::path out_dir;
  std::optional<std::uint64_t> seed_flag;
  std::size_t workers = 1;
  std::string started;
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> outputs;

  fs::path resolve(const std::string& p) const {
    const fs::path path(p);
    return path.is_absolute() ? path : config_path.parent_path() / path;
  }

  void write(const std::string& name, const std::string& text) {
    io::write_text_file(out_dir / name, text);
    outputs.push_back((out_dir / name).string());
  }

  void write_manifest() {
    Json m{{"command", command},
           {"config_path", config_path.string()},
           {"config_digest", io::sha256_hex(config_text)},
           {"seeds", seeds},
           {"artifact_version", resexp::kVersion},
           {"started_at", started},
           {"finished_at", utc_now()},
           {"outputs", outputs}};
    io::write_text_file(out_dir / "manifest.json", io::dump_json(m));
  }
};

void load(Run& run, std::initializer_list<std::string_view> keys) {
  run.config_text = io::read_text_file(run.config_path);
  run.config = io::parse_json(run.config_text, run.config_path.string());
  io::require_known_keys(run.config, keys, run.config_path.string());
  if (run.out_dir.empty()) {
    run.out_dir = run.config.contains("output_dir") ? run.resolve(run.config.at("output_dir").get<std::string>())
                                                    : fs::path("out") / run.command;
  }
  run.started = utc_now();
}

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

net::NetworkSpec network_from(const Json& cfg) {
  return cfg.contains("network") ? net::spec_from_json(cfg.at("network")) : net::NetworkSpec{};
}

harness::TaskConfig task_from(const Run& run, std::uint64_t seed) {
  harness::TaskConfig t = run.config.contains("task") ? harness::task_from_json(run.config.at("task"))
                                                      : harness::TaskConfig{};
  t.seed = seed;
  return t;
}

// --- train ------------------------------------------------------------------------------

int cmd_train(Run& run) {
  load(run, {"seed", "task", "network", "optimizer", "output_dir"});
  const std::uint64_t seed = harness::resolve_seed(run.seed_flag, io::get_or<std::uint64_t>(run.config, "seed", 0));
  run.seeds = {seed};
  const harness::TaskConfig task = task_from(run, seed);
  net::NetworkSpec spec = harness::spec_for_task(task, network_from(run.config));
  harness::SgdConfig opt = run.config.contains("optimizer") ? harness::sgd_from_json(run.config.at("optimizer"))
                                                            : harness::SgdConfig{};
  opt.seed = resexp::nd::substream_seed(seed, 12);
  const auto data = harness::make_task(task, spec);
  const auto trained = harness::train_base(spec, data.train, opt, resexp::nd::substream_seed(seed, 11));

  run.write("model.json", net::model_to_text(net::ModelFile{spec, trained.state, std::nullopt}));
  Json task_json = harness::task_to_json(task);
  run.write("task.json", io::dump_json(task_json));
  std::ostringstream trace;
  trace << "step,train_loss\n";
  for (std::size_t i = 0; i < trained.trace_steps.size(); ++i) {
    trace << trained.trace_steps[i] << ',' << fmt17(trained.trace_loss[i]) << '\n';
  }
  run.write("train_trace.csv", trace.str());
  run.write_manifest();
  std::cout << "train loss " << trained.initial_loss << " -> " << trained.final_loss << "\nwrote "
            << (run.out_dir / "model.json").string() << "\n";
  return kExitOk;
}

// --- expand -----------------------------------------------------------------------------

int cmd_expand(Run& run) {
  load(run, {"seed", "model", "task", "expansion", "output_dir"});
  const fs::path model_path = run.resolve(io::get_required<std::string>(run.config, "model", "expand config"));
  const net::ModelFile model = net::load_model(model_path);
  harness::TaskConfig task;
  if (run.config.contains("task")) {
    task = harness::task_from_json(run.config.at("task"));
  } else {
    const fs::path task_path = model_path.parent_path() / "task.json";
    task = harness::task_from_json(io::load_json_file(task_path));
  }
  task.seed = harness::resolve_seed(run.seed_flag, io::get_or<std::uint64_t>(run.config, "seed", task.seed));
  run.seeds = {task.seed};
  harness::ExpansionConfig cfg = run.config.contains("expansion")
                                     ? harness::expansion_from_json(run.config.at("expansion"))
                                     : harness::ExpansionConfig{};
  if (!run.config.contains("expansion") || !run.config.at("expansion").contains("insertion_layer")) {
    cfg.insertion_layer = model.spec.depth;
  }
  cfg.seed = resexp::nd::substream_seed(task.seed, 21);
  cfg.finetune.seed = resexp::nd::substream_seed(task.seed, 22);

  const auto data = harness::make_task(task, model.spec);
  const auto r = harness::expansion_pipeline(data, model.spec, model.state, cfg);

  run.write("expansion.json", io::dump_json(harness::expansion_to_json(r)));
  run.write("margins.json", io::dump_json(resexp::jump::margin_report_to_json(r.margins)));
  run.write("margins_route_A.json", io::dump_json(resexp::jump::margin_report_to_json(r.margins_A)));
  run.write("bound_constants.json",
            io::dump_json(resexp::cert::bound_constants_to_json(resexp::cert::BoundConstants::from(r.constants_new))));
  run.write("certificate.json", io::dump_json(resexp::cert::certificate_to_json(r.certificate)));
  run.write("model_jump.json", net::model_to_text(net::ModelFile{r.spec, r.f_jump.state, r.f_jump.block}));
  run.write("model_new.json", net::model_to_text(net::ModelFile{r.spec, r.f_new.state, r.f_new.block}));
  run.write_manifest();

  std::cout << resexp::cert::certificate_table(r.certificate);
  if (r.no_direction) {
    std::cerr << "no first-order descent direction at layer " << cfg.insertion_layer
              << " (|C_S|_F below tolerance); jumpboard equals the old model\n";
    return kExitDegenerate;
  }
  return kExitOk;
}

// --- certify ----------------------------------------------------------------------------

int cmd_certify(Run& run) {
  load(run, {"margins", "margins_route_A", "constants", "M", "K", "delta", "rho", "output_dir"});
  const auto margins = resexp::jump::margin_report_from_json(
      io::load_json_file(run.resolve(io::get_required<std::string>(run.config, "margins", "certify config"))));
  std::optional<resexp::jump::MarginReport> route_a;
  if (run.config.contains("margins_route_A")) {
    route_a = resexp::jump::margin_report_from_json(
        io::load_json_file(run.resolve(run.config.at("margins_route_A").get<std::string>())));
  }
  const Json constants_json = io::load_json_file(
      run.resolve(io::get_required<std::string>(run.config, "constants", "certify config")));
  const auto consts = resexp::cert::bound_constants_from_json(constants_json);
  const double M = io::get_required<double>(run.config, "M", "certify config");
  const double K = io::get_required<double>(run.config, "K", "certify config");
  const double delta = io::get_or(run.config, "delta", 0.05);
  const double rho = io::get_or(run.config, "rho", 0.0);
  const auto c = resexp::cert::certify(margins, route_a ? &*route_a : nullptr, consts, M, K, delta, rho);
  const std::string table = resexp::cert::certificate_table(c);
  run.write("certificate.json", io::dump_json(resexp::cert::certificate_to_json(c)));
  run.write("certificate.txt", table);
  run.write_manifest();
  std::cout << table;
  return kExitOk;
}

// --- align ------------------------------------------------------------------------------

int cmd_align(Run& run) {
  load(run, {"seed", "trials", "mode", "tau_sq", "C_sigma", "grid", "output_dir"});
  const std::uint64_t seed = harness::resolve_seed(run.seed_flag, io::get_or<std::uint64_t>(run.config, "seed", 0));
  run.seeds = {seed};
  const Json grid = io::get_required<Json>(run.config, "grid", "align config");
  io::require_known_keys(grid, {"N", "M", "K", "mu_bar_sq", "alpha"}, "align.grid");
  const auto Ns = io::get_required<std::vector<std::size_t>>(grid, "N", "align.grid");
  const auto Ms = io::get_required<std::vector<std::size_t>>(grid, "M", "align.grid");
  const auto Ks = io::get_required<std::vector<std::size_t>>(grid, "K", "align.grid");
  const bool by_alpha = grid.contains("alpha");
  const auto signal = by_alpha ? grid.at("alpha").get<std::vector<double>>()
                               : io::get_required<std::vector<double>>(grid, "mu_bar_sq", "align.grid");
  const double tau_sq = io::get_or(run.config, "tau_sq", 1.0);
  const double C_sigma = io::get_or(run.config, "C_sigma", 1.0);
  const auto trials = io::get_or<std::size_t>(run.config, "trials", 100000);
  const auto mode = harness::sampling_mode_from_string(io::get_or<std::string>(run.config, "mode", "averages"));

  std::ostringstream csv;
  csv << resexp::align::alignment_csv_header() << "\n";
  std::size_t cell = 0, violations = 0, bounded = 0;
  for (auto N : Ns)
    for (auto M : Ms)
      for (auto K : Ks)
        for (double s : signal) {
          const double alpha = by_alpha ? s : std::sqrt(s / static_cast<double>(N));
          auto cfg = resexp::align::AlignmentConfig::uniform(N, M, K, alpha, tau_sq);
          cfg.C_sigma = C_sigma;
          cfg.trials = trials;
          cfg.mode = mode;
          cfg.workers = run.workers;
          cfg.seed = resexp::nd::substream_seed(seed, cell++);
          const auto r = resexp::align::simulate_alignment(cfg);
          if (r.has_bound && r.theorem2_bound < 0.9) {
            ++bounded;
            if (!(r.wilson_ci_upper <= r.theorem2_bound)) ++violations;
          }
          csv << resexp::align::alignment_csv_row(cfg, r) << "\n";
        }
  run.write("alignment.csv", csv.str());
  run.write("alignment_summary.json",
            io::dump_json({{"cells", cell}, {"cells_with_bound_below_0.9", bounded}, {"dominance_violations", violations}}));
  run.write_manifest();
  std::cout << cell << " cells, " << bounded << " with bound < 0.9, " << violations << " dominance violations\n";
  return kExitOk;
}

// --- scaling ----------------------------------------------------------------------------

int cmd_scaling(Run& run) {
  load(run, {"beta", "c", "c_G", "q", "delta0", "coupling", "P_min", "P_max", "points", "steps_per_depth",
             "reliability", "output_dir"});
  resexp::scale::ScalingParams p;
  p.beta = io::get_or(run.config, "beta", 1.0);
  if (run.config.contains("c")) {
    p = resexp::scale::ScalingParams::with_rate(p.beta, run.config.at("c").get<double>(), 1.0, 0);
  } else {
    p.c_G = io::get_or(run.config, "c_G", 1.0);
    p.q = io::get_or(run.config, "q", 1.0);
  }
  p.delta0 = io::get_or(run.config, "delta0", 1.0);
  const auto coupling = run.config.contains("coupling") ? harness::coupling_from_json(run.config.at("coupling"))
                                                        : resexp::scale::CouplingModel{};
  const auto grid = resexp::scale::log_grid(io::get_or(run.config, "P_min", 1e12), io::get_or(run.config, "P_max", 1e15),
                                            io::get_or<std::size_t>(run.config, "points", 31));
  const double spd = io::get_or(run.config, "steps_per_depth", 1.0);
  const auto curve = resexp::scale::coupled_risk_curve(grid, coupling, p, spd);

  std::ostringstream csv;
  csv << resexp::scale::curve_csv_header() << "\n";
  for (const auto& pt : curve.points) csv << resexp::scale::curve_csv_row(pt) << "\n";
  Json summary{{"beta", p.beta},
               {"c", p.c()},
               {"delta0", p.delta0},
               {"nu", coupling.effective_nu()},
               {"fitted_slope", curve.fitted_slope},
               {"analytic_exponent", curve.analytic_exponent},
               {"relative_error", curve.relative_error},
               {"within_15_percent", curve.relative_error <= 0.15}};
  if (run.config.contains("reliability")) {
    const Json& rel = run.config.at("reliability");
    io::require_known_keys(rel, {"M", "K", "delta", "constant"}, "scaling.reliability");
    const auto& last = curve.points.back();
    const auto r = resexp::scale::reliability_constraint(static_cast<double>(std::max<std::size_t>(1, last.k)), last.N,
                                                         io::get_required<double>(rel, "M", "reliability"),
                                                         io::get_required<double>(rel, "K", "reliability"), p.beta,
                                                         io::get_or(rel, "delta", 0.05), io::get_or(rel, "constant", 1.0));
    summary["reliability_at_largest_P"] = {{"satisfied", r.satisfied}, {"lhs", r.lhs}, {"rhs", r.rhs}, {"slack", r.slack}};
  }
  run.write("scaling_curve.csv", csv.str());
  run.write("scaling_summary.json", io::dump_json(summary));
  run.write_manifest();
  std::cout << "fitted slope " << curve.fitted_slope << ", analytic -" << curve.analytic_exponent << " (relative error "
            << curve.relative_error << ")\n";
  return kExitOk;
}

// --- covariance -------------------------------------------------------------------------

int cmd_covariance(Run& run) {
  load(run, {"seed", "task", "network", "model", "pair_samples", "row_samples", "bins", "insertion_layer",
             "output_dir"});
  const std::uint64_t seed = harness::resolve_seed(run.seed_flag, io::get_or<std::uint64_t>(run.config, "seed", 0));
  run.seeds = {seed};
  harness::TaskConfig task = task_from(run, seed);
  if (!run.config.contains("task")) task.kind = harness::TaskKind::IndependentNoise;
  task.M_proxy = 0;
  task.M_estimation = 0;

  net::NetworkSpec spec;
  net::NetworkState state;
  std::optional<harness::TaskData> data;
  if (run.config.contains("model")) {
    const auto m = net::load_model(run.resolve(run.config.at("model").get<std::string>()));
    spec = m.spec;
    state = m.state;
    data = harness::make_task(task, spec);
  } else {
    spec = harness::spec_for_task(task, network_from(run.config));
    data = harness::make_task(task, spec);
    if (data->teacher_state && task.kind == harness::TaskKind::IndependentNoise) {
      state = *data->teacher_state;
    } else {
      state = net::init_state(spec, resexp::nd::substream_seed(seed, 11));
      net::freeze_norm_statistics(spec, state, data->train.x);
    }
  }
  spec.insertion_layer = io::get_or(run.config, "insertion_layer", spec.depth);
  spec.validate();
  const auto ag = net::activation_gradients(spec, state, data->train);
  resexp::align::CovarianceOptions opts;
  opts.pair_samples = io::get_or(run.config, "pair_samples", opts.pair_samples);
  opts.row_samples = io::get_or(run.config, "row_samples", opts.row_samples);
  opts.bins = io::get_or(run.config, "bins", opts.bins);
  opts.seed = resexp::nd::substream_seed(seed, 31);
  const auto d = resexp::align::covariance_diagnostics(ag.q, opts);

  std::ostringstream hist, diag;
  hist << "bin_lo,bin_hi,count\n";
  for (std::size_t b = 0; b < d.hist_counts.size(); ++b) {
    hist << fmt17(d.hist_edges[b]) << ',' << fmt17(d.hist_edges[b + 1]) << ',' << d.hist_counts[b] << '\n';
  }
  diag << "coordinate,variance\n";
  for (std::size_t j = 0; j < d.sigma_diag.size(); ++j) diag << j << ',' << fmt17(d.sigma_diag[j]) << '\n';
  run.write("offdiag_histogram.csv", hist.str());
  run.write("sigma_diag.csv", diag.str());
  run.write("covariance_summary.json",
            io::dump_json({{"M", ag.q.rows()},
                           {"N", ag.q.cols()},
                           {"pairs", d.offdiag.size()},
                           {"ratio_max_offdiag_to_max_diag", d.ratio},
                           {"gershgorin_estimate", d.gershgorin_estimate},
                           {"within_3_noise_bands", d.within_noise_fraction}}));
  run.write_manifest();
  std::cout << "off-diagonal entries within 3 noise bands: " << d.within_noise_fraction << ", ratio " << d.ratio << "\n";
  return kExitOk;
}

// --- sweep ------------------------------------------------------------------------------

int cmd_sweep(Run& run) {
  load(run, {"kind", "sweep", "task", "network", "output_dir"});
  const auto kind = io::get_or<std::string>(run.config, "kind", "gradient_decay");
  harness::SweepConfig cfg = run.config.contains("sweep") ? harness::sweep_from_json(run.config.at("sweep"))
                                                          : harness::SweepConfig{};
  if (run.seed_flag) cfg.seeds = {*run.seed_flag};
  cfg.workers = run.workers;
  run.seeds = cfg.seeds;
  harness::TaskConfig task = run.config.contains("task") ? harness::task_from_json(run.config.at("task"))
                                                         : harness::TaskConfig{};
  const net::NetworkSpec spec = network_from(run.config);
  harness::SweepIo sio{run.out_dir / "journal.jsonl"};
  if (kind == "gradient_decay") {
    const auto s = harness::gradient_decay_sweep(cfg, task, spec, sio);
    run.write("gradient_decay.csv", harness::decay_csv(s));
    run.write("gradient_decay_summary.json",
              io::dump_json({{"depth_mean_normalized", s.depth_mean_normalized}, {"spearman_depth", s.spearman_depth}}));
    std::cout << "Spearman(depth, mean normalized |mu|) = " << s.spearman_depth << "\n";
  } else if (kind == "joint_scaling") {
    const auto s = harness::joint_scaling_sweep(cfg, task, spec, sio);
    run.write("joint_scaling_runs.csv", harness::joint_rows_csv(s));
    run.write("joint_scaling_cells.csv", harness::joint_cells_csv(s));
    std::cout << s.cells.size() << " cells\n";
  } else {
    throw Error(ErrorCode::ConfigError, "sweep: unknown kind '" + kind + "'");
  }
  run.write_manifest();
  return kExitOk;
}

int exit_code_for(const Error& e) {
  switch (e.code()) {
    case ErrorCode::ConfigError: return kExitConfig;
    case ErrorCode::DivergedTraining:
    case ErrorCode::NonFinite: return kExitDiverged;
    case ErrorCode::NoDescentDirection: return kExitDegenerate;
    default: return kExitFailure;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"resexp: depth expansion of normalized residual networks at desk scale"};
  app.require_subcommand(1);
  app.set_version_flag("--version", resexp::kVersion);

  Run run;
  std::string config;
  std::string out;
  std::uint64_t seed = 0;
  using Handler = int (*)(Run&);
  struct Sub {
    const char* name;
    const char* help;
    Handler handler;
  };
  const Sub subs[] = {
      {"train", "Train a base network on a synthetic task", cmd_train},
      {"expand", "Insert a jumpboard block, select the final model, measure margins and certify", cmd_expand},
      {"certify", "Evaluate generalization bounds and improvement certificates on stored margins", cmd_certify},
      {"align", "Monte Carlo train/test alignment failure rates against the Chebyshev bound", cmd_align},
      {"scaling", "Excess-risk recursion, power-law envelope and coupled scaling curve", cmd_scaling},
      {"covariance", "Activation-gradient covariance diagnostics", cmd_covariance},
      {"sweep", "Depth/width sweeps (gradient decay or joint scaling), resumable", cmd_sweep},
  };
  std::vector<std::pair<CLI::App*, Handler>> handlers;
  for (const auto& s : subs) {
    CLI::App* sub = app.add_subcommand(s.name, s.help);
    sub->add_option("-c,--config", config, "JSON run configuration")->required()->check(CLI::ExistingFile);
    sub->add_option("-o,--out", out, "Output directory (default: config output_dir, else out/<command>)");
    sub->add_option("--seed", seed, "Override the config seed (takes precedence over RESEXP_SEED)");
    sub->add_option("-j,--workers", run.workers, "Maximum concurrent workers")->check(CLI::PositiveNumber);
    handlers.emplace_back(sub, s.handler);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  for (const auto& [sub, handler] : handlers) {
    if (!sub->parsed()) continue;
    run.command = sub->get_name();
    run.config_path = config;
    if (!out.empty()) run.out_dir = out;
    if (sub->count("--seed") > 0) run.seed_flag = seed;
    try {
      return handler(run);
    } catch (const Error& e) {
      std::cerr << "resexp " << run.command << ": " << e.what() << "\n";
      return exit_code_for(e);
    } catch (const nlohmann::json::exception& e) {
      std::cerr << "resexp " << run.command << ": ConfigError: " << e.what() << "\n";
      return kExitConfig;
    } catch (const std::exception& e) {
      std::cerr << "resexp " << run.command << ": " << e.what() << "\n";
      return kExitFailure;
    }
  }
  return kExitFailure;
}
