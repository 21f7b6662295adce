#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace resexp::scale {

struct ScalingParams {
  double beta = 1.0;
  double c_G = 1.0;
  double q = 1.0;
  double delta0 = 1.0;
  std::size_t k_max = 100;

  double c() const { return c_G / (2.0 * q); }
  static ScalingParams with_rate(double beta, double c, double delta0, std::size_t k_max);
  void validate() const;  // InvalidArgument unless beta >= 0, c_G >= 0, q > 0, delta0 > 0
};

enum class CouplingKind { Linear, Polynomial };

// L = u(N): Linear u = kappa N, Polynomial u = kappa N^{1 - nu}; P(N) = a_arch u(N) N^2.
struct CouplingModel {
  CouplingKind kind = CouplingKind::Linear;
  double kappa = 1.0;
  double nu = 0.0;
  double a_arch = 1.0;

  double effective_nu() const { return kind == CouplingKind::Linear ? 0.0 : nu; }
  double depth(double N) const;
  double params(double N) const;
  void validate() const;
};

// Delta_{k+1} = Delta_k - c Delta_k^{1+beta}, k = 0..k_max. StepTooLarge if an iterate reaches <= 0.
std::vector<double> run_recursion(const ScalingParams& p);
std::vector<double> run_recursion(const ScalingParams& p, std::size_t steps);

// (Delta_0^{-beta} + beta c k)^{-1/beta}; BetaZero for beta = 0.
double power_law_envelope(const ScalingParams& p, double k);
// (1 - c)^k Delta_0
double exponential_envelope(const ScalingParams& p, double k);

struct WidthDepth {
  double N = 0.0;
  double L = 0.0;
};
// Solves P = a_arch u(N) N^2: closed form for both couplings, bisection as a fallback check.
WidthDepth params_to_width(double P, const CouplingModel& coupling);
// Monotone bisection solve of the same equation (independent of the closed form).
WidthDepth params_to_width_bisect(double P, const CouplingModel& coupling);

// a_PL = (1 - nu) / ((3 - nu) beta)
double scaling_exponent(double nu, double beta);

struct CurvePoint {
  double P = 0.0;
  double N = 0.0;
  double L = 0.0;
  std::size_t k = 0;
  double delta = 0.0;
  double envelope = 0.0;
};

struct RiskCurve {
  std::vector<CurvePoint> points;
  double fitted_slope = 0.0;   // d log Delta / d log P on the tail half
  double analytic_exponent = 0.0;
  double relative_error = 0.0;  // |fitted + a_PL| / a_PL
};

// k(P) = round(steps_per_depth * L(P)) recursion steps per grid point.
RiskCurve coupled_risk_curve(const std::vector<double>& P_grid, const CouplingModel& coupling,
                             const ScalingParams& params, double steps_per_depth = 1.0);
std::vector<double> log_grid(double P_min, double P_max, std::size_t points);

struct Reliability {
  bool satisfied = false;
  double lhs = 0.0;  // k^{(1+beta)/beta}
  double rhs = 0.0;  // constant * delta * N * min(M, K)
  double slack = 0.0;  // rhs / lhs
};
Reliability reliability_constraint(double k, double N, double M, double K, double beta, double delta,
                                   double constant = 1.0);

std::string curve_csv_header();
std::string curve_csv_row(const CurvePoint& p);

}  // namespace resexp::scale
