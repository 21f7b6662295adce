#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "resexp/io/json_io.hpp"
#include "resexp/jumpboard/jumpboard.hpp"
#include "resexp/netmodel/spec.hpp"

namespace resexp::cert {

// The scalar constants entering the covering-number bound.
struct BoundConstants {
  double B_ell = 1.0;
  double L_ell = 1.0;
  double d = 1.0;
  double b_bar = 1.0;
  double num_layers = 1.0;
  double lambda_max = 1.0;

  static BoundConstants from(const net::ArchConstants& k);
};

io::Json bound_constants_to_json(const BoundConstants& c);
BoundConstants bound_constants_from_json(const io::Json& j);

struct BoundInputs {
  BoundConstants consts;
  double m = 1.0;
  double delta = 0.05;
  double rho = 0.0;  // <= 0 selects m^{-1/2}

  double effective_rho() const;
  void validate() const;
};

// d * log(2b/eps + 1)
double covering_number_log(double b, double eps, double d);
// B_ell sqrt(2 d log(2 b_bar L L_ell Lambda_max / eps0 + 1) / m) + eps0
double rademacher_bound(const BoundConstants& c, double m, double eps0);

struct EpsGenTerms {
  double complexity = 0.0;  // 2 * Rademacher square-root term
  double discretization = 0.0;  // 2 rho
  double confidence = 0.0;  // 3 B_ell sqrt(log(2/delta) / 2m)
  double total() const { return complexity + discretization + confidence; }
};
EpsGenTerms eps_gen_terms(const BoundInputs& in);
double eps_gen_norm(const BoundInputs& in);

// log(2 b_bar L L_ell Lambda_max sqrt(m) + 1)
double gamma_arch(const BoundConstants& c, double m);

// 6 exp(-K Delta_R^2 / (8 B_ell^2))
double hoeffding_failure(double K, double delta_R, double B_ell);

// Smallest m with eps_gen_norm(m, rho = m^{-1/2}) <= eps; doubling then bisection over [1, 2^60].
std::uint64_t data_requirement(double eps, double delta, const BoundConstants& c);

enum class Verdict { CertifiedStrict, CertifiedNonWorsening, NotCertified };
std::string_view to_string(Verdict v);

struct AuditStep {
  std::string id;
  std::string lhs_label;
  double lhs = 0.0;
  std::string relation;  // "=" or "<="
  std::string rhs_label;
  double rhs = 0.0;
  bool holds = false;
};

struct RouteCheck {
  Verdict verdict = Verdict::NotCertified;
  double lhs = 0.0;
  double rhs = 0.0;
  std::vector<AuditStep> chain;
};

// Population route through a held-out proxy of the risk: strict iff Delta_R/2 + Delta_ERM > 2 eps_M,
// non-worsening iff 2 eps_M <= Delta_R/2.
RouteCheck check_route_A(const jump::MarginReport& r, double delta_R_proxy, double eps_M);
// Direct train/test comparison: strict iff Delta_R^test + Delta_ERM > 2(eps_M + eps_K).
RouteCheck check_route_B(const jump::MarginReport& r, double eps_M, double eps_K);
// Population statement: strict iff Delta_R + Delta_ERM > 2 eps_M.
RouteCheck check_population(const jump::MarginReport& r, double delta_R, double delta_ERM, double eps_M);

struct CertificateReport {
  double eps_M = 0.0;
  double eps_K = 0.0;
  double delta = 0.0;
  double hoeffding_term = 0.0;
  double route_A_lhs = 0.0, route_A_rhs = 0.0;
  double route_B_lhs = 0.0, route_B_rhs = 0.0;
  double pop_lhs = 0.0, pop_rhs = 0.0;
  Verdict verdict_A = Verdict::NotCertified;
  Verdict verdict_B = Verdict::NotCertified;
  Verdict verdict_pop = Verdict::NotCertified;
  std::vector<AuditStep> audit_chain;
};

// Route B uses `route_b`; Route A and the population check use `route_a` (its jumpboard is the
// population one and its proxy risks must be present), or `route_b` when route_a is null.
CertificateReport certify(const jump::MarginReport& route_b, const jump::MarginReport* route_a, const BoundConstants& c,
                          double M, double K, double delta, double rho = 0.0);

// Flat key/value record.
io::Json certificate_to_json(const CertificateReport& c);
// Inequality-chain table for terminals.
std::string certificate_table(const CertificateReport& c);

}  // namespace resexp::cert
