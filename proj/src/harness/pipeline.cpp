#include <cmath>

#include "resexp/error.hpp"
#include "resexp/harness/harness.hpp"
#include "resexp/netmodel/serialize.hpp"

namespace resexp::harness {

namespace {

struct Jumpboard {
  jump::ExpandedModel model;
  jump::LineSearchResult search;
  bool degenerate = false;
  bool no_direction = false;
  double c_frob = 0.0;
};

// Direction from `direction_data`, step size from the loss on the same data.
Jumpboard jumpboard_on(const net::NetworkSpec& spec, const net::NetworkState& base, const net::InsertedBlock& block,
                       const net::Dataset& direction_data, const jump::LineSearchOptions& ls) {
  Jumpboard j;
  j.model.state = base;
  j.model.block = block;
  try {
    const auto dir = jump::descent_direction_on(spec, base, block, direction_data);
    j.c_frob = std::sqrt(dir.frob_sq);
    auto built = jump::build_jumpboard(spec, base, block, dir, direction_data, ls);
    j.model = std::move(built.model);
    j.search = built.search;
    j.degenerate = built.search.degenerate;
  } catch (const Error& e) {
    if (e.code() != ErrorCode::NoDescentDirection) throw;
    j.degenerate = true;
    j.no_direction = true;
    j.search.degenerate = true;
    j.search.value0 = j.search.value = net::mean_loss(spec, base, &block, direction_data);
  }
  return j;
}

io::Json arch_constants_to_json(const net::ArchConstants& k) {
  io::Json layers = io::Json::array();
  for (std::size_t i = 0; i < k.layers.size(); ++i) {
    const auto& l = k.layers[i];
    layers.push_back({{"c", l.c}, {"s", l.s}, {"L_p", l.lip_param}, {"b", l.b}, {"d", l.d}, {"Lambda", k.lambda[i]}});
  }
  return {{"B_ell", k.B_ell},   {"L_ell", k.L_ell},       {"L_top", k.L_top},   {"B_0", k.B_0},
          {"gamma_max", k.gamma_max}, {"B_x", k.B_x},     {"B_norm", k.B_norm}, {"B_star", k.B_star},
          {"d", k.d},           {"b_bar", k.b_bar},       {"Lambda_max", k.lambda_max}, {"layers", layers}};
}

}  // namespace

ExpansionResult expansion_pipeline(const TaskData& task, const net::NetworkSpec& spec_in,
                                   const net::NetworkState& base, const ExpansionConfig& cfg) {
  ExpansionResult r;
  r.spec = spec_in;
  r.spec.insertion_layer = cfg.insertion_layer;
  r.spec.validate();
  const auto& spec = r.spec;
  const net::InsertedBlock block = net::make_block(spec, cfg.feature, cfg.feature_dim, cfg.seed);

  r.stats = jump::collect_gradient_stats(spec, base, task.train, task.test,
                                         {cfg.offdiag_pairs, cfg.seed, false});

  r.f_old.state = base;
  const Jumpboard emp = jumpboard_on(spec, base, block, task.train, cfg.line_search);
  r.degenerate = emp.degenerate;
  r.no_direction = emp.no_direction;
  r.c_s_frob = emp.c_frob;
  r.search = emp.search;
  r.f_jump = emp.model;

  const Jumpboard pop = task.estimation.empty() ? Jumpboard{} : jumpboard_on(spec, base, block, task.estimation,
                                                                           cfg.line_search);
  r.search_pop = pop.search;
  r.degenerate_pop = task.estimation.empty() || pop.degenerate;
  jump::ExpandedModel f_pop = task.estimation.empty() ? r.f_jump : pop.model;

  std::optional<jump::ExpandedModel> f_alg;
  if (!cfg.skip_finetune) f_alg = finetune_block(spec, r.f_jump, task.train, cfg.finetune, cfg.joint_finetune);

  auto choose = [&](const jump::ExpandedModel& jb) -> std::pair<jump::ExpandedModel, jump::Selection> {
    if (!f_alg) {
      const double l = jump::train_loss(spec, jb, task.train);
      jump::Selection s;
      s.chose_alg = false;
      s.loss_alg = l;
      s.loss_jump = l;
      s.loss_new = l;
      return {jb, s};
    }
    return jump::select_final_model(spec, *f_alg, jb, task.train);
  };

  auto [f_new, sel] = choose(r.f_jump);
  r.f_new = std::move(f_new);
  r.selection = sel;
  const net::Dataset* proxy = task.proxy.empty() ? nullptr : &task.proxy;
  r.margins = jump::measure_margins(spec, r.f_old, r.f_jump, r.f_new, task.train, task.test, proxy);

  const auto f_new_A = choose(f_pop).first;
  r.margins_A = jump::measure_margins(spec, r.f_old, f_pop, f_new_A, task.train, task.test, proxy);

  r.constants_old = net::compute_arch_constants(spec, base, nullptr);
  r.constants_new = net::compute_arch_constants(spec, base, &block);
  r.certificate = cert::certify(r.margins, &r.margins_A, cert::BoundConstants::from(r.constants_new),
                                static_cast<double>(task.train.size()), static_cast<double>(task.test.size()),
                                cfg.delta, cfg.rho);
  if (proxy != nullptr) {
    r.gap_old = std::abs(r.margins.L_train_old - r.margins.R_old);
    r.gap_new = std::abs(r.margins.L_train_new - r.margins.R_new);
  }
  return r;
}

io::Json expansion_to_json(const ExpansionResult& r) {
  io::Json j;
  j["spec"] = net::spec_to_json(r.spec);
  j["no_direction"] = r.no_direction;
  j["degenerate"] = r.degenerate;
  j["degenerate_population"] = r.degenerate_pop;
  j["c_s_frob"] = r.c_s_frob;
  j["eta"] = r.search.eta;
  j["eta_population"] = r.search_pop.eta;
  j["line_search_halvings"] = r.search.halvings;
  j["selected"] = r.selection.chose_alg ? "alg" : "jump";
  j["stats"] = {{"M", r.stats.M},
                {"K", r.stats.K},
                {"mu_norm_sq", r.stats.mu_norm_sq},
                {"g_norm_sq", r.stats.g_norm_sq},
                {"mu_dot_g", r.stats.mu_dot_g}};
  j["margins"] = jump::margin_report_to_json(r.margins);
  j["margins_route_A"] = jump::margin_report_to_json(r.margins_A);
  j["constants_old"] = arch_constants_to_json(r.constants_old);
  j["constants_new"] = arch_constants_to_json(r.constants_new);
  j["bound_constants"] = cert::bound_constants_to_json(cert::BoundConstants::from(r.constants_new));
  j["certificate"] = cert::certificate_to_json(r.certificate);
  j["gap_old"] = r.gap_old;
  j["gap_new"] = r.gap_new;
  return j;
}

}  // namespace resexp::harness
