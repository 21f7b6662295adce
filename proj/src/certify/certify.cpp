#include "resexp/certify/certify.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "resexp/error.hpp"

namespace resexp::cert {

namespace {

Verdict tri_state(bool strict, bool non_worsening) {
  if (strict) return Verdict::CertifiedStrict;
  if (non_worsening) return Verdict::CertifiedNonWorsening;
  return Verdict::NotCertified;
}

// Relative slack for the measured equalities in the audit chains.
bool nearly_equal(double a, double b) { return std::abs(a - b) <= 1e-12 * std::max({1.0, std::abs(a), std::abs(b)}); }

AuditStep step(std::string id, std::string lhs_label, double lhs, std::string rel, std::string rhs_label, double rhs) {
  AuditStep s{std::move(id), std::move(lhs_label), lhs, std::move(rel), std::move(rhs_label), rhs, false};
  s.holds = s.relation == "=" ? nearly_equal(lhs, rhs) : lhs <= rhs + 1e-12 * std::max(1.0, std::abs(rhs));
  return s;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

}  // namespace

BoundConstants BoundConstants::from(const net::ArchConstants& k) {
  BoundConstants c;
  c.B_ell = k.B_ell;
  c.L_ell = k.L_ell;
  c.d = static_cast<double>(k.d);
  c.b_bar = k.b_bar;
  c.num_layers = static_cast<double>(k.num_layers());
  c.lambda_max = k.lambda_max;
  return c;
}

io::Json bound_constants_to_json(const BoundConstants& c) {
  return {{"B_ell", c.B_ell}, {"L_ell", c.L_ell},           {"d", c.d},
          {"b_bar", c.b_bar}, {"num_layers", c.num_layers}, {"lambda_max", c.lambda_max}};
}

BoundConstants bound_constants_from_json(const io::Json& j) {
  io::require_known_keys(j, {"B_ell", "L_ell", "d", "b_bar", "num_layers", "lambda_max"}, "constants");
  BoundConstants c;
  c.B_ell = io::get_required<double>(j, "B_ell", "constants");
  c.L_ell = io::get_required<double>(j, "L_ell", "constants");
  c.d = io::get_required<double>(j, "d", "constants");
  c.b_bar = io::get_required<double>(j, "b_bar", "constants");
  c.num_layers = io::get_required<double>(j, "num_layers", "constants");
  c.lambda_max = io::get_required<double>(j, "lambda_max", "constants");
  return c;
}

double BoundInputs::effective_rho() const { return rho > 0.0 ? rho : 1.0 / std::sqrt(m); }

void BoundInputs::validate() const {
  if (!(m >= 1.0)) throw Error(ErrorCode::InvalidArgument, "m must be >= 1");
  if (!(delta > 0.0 && delta < 1.0)) throw Error(ErrorCode::InvalidArgument, "delta must lie in (0, 1)");
  if (!(consts.B_ell > 0.0)) throw Error(ErrorCode::InvalidArgument, "B_ell must be positive");
}

double covering_number_log(double b, double eps, double d) {
  if (!(b > 0.0) || !(eps > 0.0) || !(d >= 1.0)) throw Error(ErrorCode::InvalidArgument, "covering_number_log");
  return d * std::log(2.0 * b / eps + 1.0);
}

double rademacher_bound(const BoundConstants& c, double m, double eps0) {
  if (!(m >= 1.0) || !(eps0 > 0.0)) throw Error(ErrorCode::InvalidArgument, "rademacher_bound");
  const double a = 2.0 * c.b_bar * c.num_layers * c.L_ell * c.lambda_max;
  return c.B_ell * std::sqrt(2.0 * c.d * std::log(a / eps0 + 1.0) / m) + eps0;
}

EpsGenTerms eps_gen_terms(const BoundInputs& in) {
  in.validate();
  const auto& c = in.consts;
  const double rho = in.effective_rho();
  const double a = 2.0 * c.b_bar * c.num_layers * c.L_ell * c.lambda_max;
  EpsGenTerms t;
  t.complexity = 2.0 * c.B_ell * std::sqrt(2.0 * c.d * std::log(a / rho + 1.0) / in.m);
  t.discretization = 2.0 * rho;
  t.confidence = 3.0 * c.B_ell * std::sqrt(std::log(2.0 / in.delta) / (2.0 * in.m));
  return t;
}

double eps_gen_norm(const BoundInputs& in) { return eps_gen_terms(in).total(); }

double gamma_arch(const BoundConstants& c, double m) {
  return std::log(2.0 * c.b_bar * c.num_layers * c.L_ell * c.lambda_max * std::sqrt(m) + 1.0);
}

double hoeffding_failure(double K, double delta_R, double B_ell) {
  if (!(K >= 1.0) || !(B_ell > 0.0) || !(delta_R >= 0.0)) throw Error(ErrorCode::InvalidArgument, "hoeffding");
  return 6.0 * std::exp(-K * delta_R * delta_R / (8.0 * B_ell * B_ell));
}

std::uint64_t data_requirement(double eps, double delta, const BoundConstants& c) {
  if (!(eps > 0.0)) throw Error(ErrorCode::InvalidArgument, "target eps must be positive");
  auto value = [&](std::uint64_t m) {
    BoundInputs in{c, static_cast<double>(m), delta, 0.0};
    return eps_gen_norm(in);
  };
  constexpr std::uint64_t kMax = std::uint64_t{1} << 60;
  if (value(1) <= eps) return 1;
  std::uint64_t lo = 1, hi = 2;
  while (value(hi) > eps) {
    if (hi >= kMax) {
      throw Error(ErrorCode::Unsatisfiable, "eps = " + fmt(eps) + " not reached for m <= 2^60");
    }
    lo = hi;
    hi *= 2;
  }
  // value(lo) > eps >= value(hi)
  while (hi - lo > 1) {
    const std::uint64_t mid = lo + (hi - lo) / 2;
    if (value(mid) <= eps) {
      hi = mid;
    } else {
      lo = mid;
    }
  }
  return hi;
}

std::string_view to_string(Verdict v) {
  switch (v) {
    case Verdict::CertifiedStrict: return "certified-strict";
    case Verdict::CertifiedNonWorsening: return "certified-non-worsening";
    case Verdict::NotCertified: return "not-certified";
  }
  return "?";
}

RouteCheck check_route_A(const jump::MarginReport& r, double delta_R, double eps_M) {
  RouteCheck out;
  out.lhs = 0.5 * delta_R + r.delta_ERM;
  out.rhs = 2.0 * eps_M;
  out.verdict = tri_state(delta_R >= 0.0 && out.lhs > out.rhs, delta_R >= 0.0 && 2.0 * eps_M <= 0.5 * delta_R);
  if (r.has_proxy) {
    out.chain.push_back(step("A1", "R(f_jump)", r.R_jump, "=", "R(f_old) - Delta_R", r.R_old - r.delta_R));
    out.chain.push_back(step("A2", "L_train(f_jump)", r.L_train_jump, "<=", "R(f_jump) + eps_M", r.R_jump + eps_M));
    out.chain.push_back(
        step("A3", "L_train(f_new)", r.L_train_new, "=", "L_train(f_jump) - Delta_ERM", r.L_train_jump - r.delta_ERM));
    out.chain.push_back(step("A4", "R(f_new)", r.R_new, "<=", "L_train(f_new) + eps_M", r.L_train_new + eps_M));
    out.chain.push_back(step("A5", "R(f_new)", r.R_new, "<=", "R(f_old) - Delta_R - Delta_ERM + 2 eps_M",
                             r.R_old - r.delta_R - r.delta_ERM + 2.0 * eps_M));
  }
  return out;
}

RouteCheck check_route_B(const jump::MarginReport& r, double eps_M, double eps_K) {
  RouteCheck out;
  const double eps_tt = eps_M + eps_K;
  out.lhs = r.delta_R_test + r.delta_ERM;
  out.rhs = 2.0 * eps_tt;
  out.verdict = tri_state(out.lhs > out.rhs, out.lhs >= out.rhs);
  out.chain.push_back(
      step("B1", "L_test(f_jump)", r.L_test_jump, "=", "L_test(f_old) - Delta_R^test", r.L_test_old - r.delta_R_test));
  out.chain.push_back(
      step("B2", "L_train(f_jump)", r.L_train_jump, "<=", "L_test(f_jump) + eps_M + eps_K", r.L_test_jump + eps_tt));
  out.chain.push_back(
      step("B3", "L_train(f_new)", r.L_train_new, "=", "L_train(f_jump) - Delta_ERM", r.L_train_jump - r.delta_ERM));
  out.chain.push_back(
      step("B4", "L_test(f_new)", r.L_test_new, "<=", "L_train(f_new) + eps_M + eps_K", r.L_train_new + eps_tt));
  out.chain.push_back(step("B5", "L_test(f_new)", r.L_test_new, "<=",
                           "L_test(f_old) - Delta_R^test - Delta_ERM + 2(eps_M + eps_K)",
                           r.L_test_old - r.delta_R_test - r.delta_ERM + 2.0 * eps_tt));
  return out;
}

RouteCheck check_population(const jump::MarginReport& r, double delta_R, double delta_ERM, double eps_M) {
  RouteCheck out;
  out.lhs = delta_R + delta_ERM;
  out.rhs = 2.0 * eps_M;
  out.verdict = tri_state(out.lhs > out.rhs, out.lhs >= out.rhs);
  if (r.has_proxy) {
    out.chain.push_back(step("P1", "R(f_new)", r.R_new, "<=", "R(f_old) - Delta_R - Delta_ERM + 2 eps_M",
                             r.R_old - delta_R - delta_ERM + 2.0 * eps_M));
  }
  return out;
}

CertificateReport certify(const jump::MarginReport& route_b, const jump::MarginReport* route_a, const BoundConstants& c,
                          double M, double K, double delta, double rho) {
  const jump::MarginReport& r = route_a != nullptr ? *route_a : route_b;
  CertificateReport out;
  out.delta = delta;
  out.eps_M = eps_gen_norm({c, M, delta, rho});
  out.eps_K = eps_gen_norm({c, K, delta, rho});
  const double delta_R = r.has_proxy ? r.delta_R : 0.0;
  out.hoeffding_term = hoeffding_failure(K, std::max(0.0, delta_R), c.B_ell);

  const RouteCheck a = check_route_A(r, delta_R, out.eps_M);
  const RouteCheck b = check_route_B(route_b, out.eps_M, out.eps_K);
  const RouteCheck p = check_population(r, delta_R, r.delta_ERM, out.eps_M);
  out.route_A_lhs = a.lhs;
  out.route_A_rhs = a.rhs;
  out.verdict_A = r.has_proxy ? a.verdict : Verdict::NotCertified;
  out.route_B_lhs = b.lhs;
  out.route_B_rhs = b.rhs;
  out.verdict_B = b.verdict;
  out.pop_lhs = p.lhs;
  out.pop_rhs = p.rhs;
  out.verdict_pop = r.has_proxy ? p.verdict : Verdict::NotCertified;
  for (const auto* chain : {&a.chain, &b.chain}) out.audit_chain.insert(out.audit_chain.end(), chain->begin(), chain->end());
  return out;
}

io::Json certificate_to_json(const CertificateReport& c) {
  io::Json j{{"eps_M", c.eps_M},
             {"eps_K", c.eps_K},
             {"delta", c.delta},
             {"hoeffding_term", c.hoeffding_term},
             {"route_A_lhs", c.route_A_lhs},
             {"route_A_rhs", c.route_A_rhs},
             {"route_B_lhs", c.route_B_lhs},
             {"route_B_rhs", c.route_B_rhs},
             {"pop_lhs", c.pop_lhs},
             {"pop_rhs", c.pop_rhs},
             {"verdict_A", std::string(to_string(c.verdict_A))},
             {"verdict_B", std::string(to_string(c.verdict_B))},
             {"verdict_pop", std::string(to_string(c.verdict_pop))}};
  for (const auto& s : c.audit_chain) {
    const std::string k = "audit_" + s.id + "_";
    j[k + "lhs"] = s.lhs;
    j[k + "relation"] = s.relation;
    j[k + "rhs"] = s.rhs;
    j[k + "holds"] = s.holds;
  }
  return j;
}

std::string certificate_table(const CertificateReport& c) {
  std::ostringstream os;
  os << "eps_M = " << fmt(c.eps_M) << "   eps_K = " << fmt(c.eps_K) << "   delta = " << fmt(c.delta)
     << "   Hoeffding failure = " << fmt(c.hoeffding_term) << "\n\n";
  char line[512];
  std::snprintf(line, sizeof line, "%-4s %-18s %14s  %-3s %-58s %14s  %s\n", "step", "lhs", "value", "rel", "rhs",
                "value", "ok");
  os << line;
  for (const auto& s : c.audit_chain) {
    std::snprintf(line, sizeof line, "%-4s %-18s %14.8g  %-3s %-58s %14.8g  %s\n", s.id.c_str(),
                  s.lhs_label.c_str(), s.lhs, s.relation.c_str(), s.rhs_label.c_str(), s.rhs, s.holds ? "yes" : "NO");
    os << line;
  }
  os << "\n";
  os << "route A: Delta_R/2 + Delta_ERM = " << fmt(c.route_A_lhs) << " vs 2 eps_M = " << fmt(c.route_A_rhs) << "  -> "
     << to_string(c.verdict_A) << "\n";
  os << "route B: Delta_R^test + Delta_ERM = " << fmt(c.route_B_lhs) << " vs 2(eps_M + eps_K) = " << fmt(c.route_B_rhs)
     << "  -> " << to_string(c.verdict_B) << "\n";
  os << "population: Delta_R + Delta_ERM = " << fmt(c.pop_lhs) << " vs 2 eps_M = " << fmt(c.pop_rhs) << "  -> "
     << to_string(c.verdict_pop) << "\n";
  return os.str();
}

}  // namespace resexp::cert
