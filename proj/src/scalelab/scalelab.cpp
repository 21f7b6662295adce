#include "resexp/scalelab/scalelab.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "resexp/error.hpp"
#include "resexp/ndcore/stats.hpp"

namespace resexp::scale {

ScalingParams ScalingParams::with_rate(double beta, double c, double delta0, std::size_t k_max) {
  ScalingParams p;
  p.beta = beta;
  p.q = 0.5;
  p.c_G = c;  // c = c_G / (2 q)
  p.delta0 = delta0;
  p.k_max = k_max;
  return p;
}

void ScalingParams::validate() const {
  if (!(beta >= 0.0)) throw Error(ErrorCode::InvalidArgument, "beta must be >= 0");
  if (!(c_G >= 0.0) || !(q > 0.0)) throw Error(ErrorCode::InvalidArgument, "need c_G >= 0 and q > 0");
  if (!(delta0 > 0.0)) throw Error(ErrorCode::InvalidArgument, "delta0 must be positive");
}

double CouplingModel::depth(double N) const {
  return kind == CouplingKind::Linear ? kappa * N : kappa * std::pow(N, 1.0 - nu);
}

double CouplingModel::params(double N) const { return a_arch * depth(N) * N * N; }

void CouplingModel::validate() const {
  if (!(kappa > 0.0) || !(a_arch > 0.0)) throw Error(ErrorCode::InvalidArgument, "kappa and a_arch must be positive");
  if (kind == CouplingKind::Polynomial && !(nu >= 0.0 && nu < 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "nu must lie in [0, 1)");
  }
}

std::vector<double> run_recursion(const ScalingParams& p) { return run_recursion(p, p.k_max); }

std::vector<double> run_recursion(const ScalingParams& p, std::size_t steps) {
  p.validate();
  const double c = p.c();
  std::vector<double> out;
  out.reserve(steps + 1);
  out.push_back(p.delta0);
  for (std::size_t k = 0; k < steps; ++k) {
    const double d = out.back();
    const double next = d - c * std::pow(d, 1.0 + p.beta);
    if (!(next > 0.0)) {
      throw Error(ErrorCode::StepTooLarge, "iterate " + std::to_string(k + 1) + " is not positive");
    }
    out.push_back(next);
  }
  return out;
}

double power_law_envelope(const ScalingParams& p, double k) {
  p.validate();
  if (p.beta == 0.0) throw Error(ErrorCode::BetaZero, "use the exponential form (1 - c)^k Delta_0 for beta = 0");
  return std::pow(std::pow(p.delta0, -p.beta) + p.beta * p.c() * k, -1.0 / p.beta);
}

double exponential_envelope(const ScalingParams& p, double k) { return std::pow(1.0 - p.c(), k) * p.delta0; }

WidthDepth params_to_width(double P, const CouplingModel& coupling) {
  coupling.validate();
  if (!(P > 0.0)) throw Error(ErrorCode::InvalidArgument, "parameter budget must be positive");
  const double nu = coupling.effective_nu();
  WidthDepth w;
  w.N = std::pow(P / (coupling.a_arch * coupling.kappa), 1.0 / (3.0 - nu));
  w.L = coupling.depth(w.N);
  return w;
}

WidthDepth params_to_width_bisect(double P, const CouplingModel& coupling) {
  coupling.validate();
  if (!(P > 0.0)) throw Error(ErrorCode::InvalidArgument, "parameter budget must be positive");
  double lo = 0.0, hi = 1.0;
  while (coupling.params(hi) < P) hi *= 2.0;
  for (int i = 0; i < 200 && hi - lo > 1e-15 * hi; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (coupling.params(mid) < P) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return {0.5 * (lo + hi), coupling.depth(0.5 * (lo + hi))};
}

double scaling_exponent(double nu, double beta) {
  if (!(nu >= 0.0 && nu < 1.0) || !(beta > 0.0)) throw Error(ErrorCode::InvalidArgument, "need 0 <= nu < 1, beta > 0");
  return (1.0 - nu) / ((3.0 - nu) * beta);
}

std::vector<double> log_grid(double P_min, double P_max, std::size_t points) {
  if (!(P_min > 0.0) || !(P_max > P_min) || points < 2) throw Error(ErrorCode::InvalidArgument, "log_grid");
  std::vector<double> g(points);
  const double a = std::log(P_min), b = std::log(P_max);
  for (std::size_t i = 0; i < points; ++i) {
    g[i] = std::exp(a + (b - a) * static_cast<double>(i) / static_cast<double>(points - 1));
  }
  return g;
}

RiskCurve coupled_risk_curve(const std::vector<double>& P_grid, const CouplingModel& coupling,
                             const ScalingParams& params, double steps_per_depth) {
  if (P_grid.size() < 2) throw Error(ErrorCode::InvalidArgument, "risk curve needs at least two grid points");
  if (!(params.beta > 0.0)) throw Error(ErrorCode::BetaZero, "power-law fit needs beta > 0");
  RiskCurve curve;
  std::size_t k_top = 0;
  std::vector<std::size_t> ks;
  for (double P : P_grid) {
    const auto wd = params_to_width(P, coupling);
    const auto k = static_cast<std::size_t>(std::llround(steps_per_depth * wd.L));
    ks.push_back(k);
    k_top = std::max(k_top, k);
    curve.points.push_back({P, wd.N, wd.L, k, 0.0, power_law_envelope(params, static_cast<double>(k))});
  }
  const auto traj = run_recursion(params, k_top);
  for (std::size_t i = 0; i < curve.points.size(); ++i) curve.points[i].delta = traj[ks[i]];

  const std::size_t start = curve.points.size() / 2;
  std::vector<double> x, y;
  for (std::size_t i = start; i < curve.points.size(); ++i) {
    x.push_back(std::log(curve.points[i].P));
    y.push_back(std::log(curve.points[i].delta));
  }
  if (x.size() < 2) throw Error(ErrorCode::InvalidArgument, "tail half of the grid has fewer than two points");
  curve.fitted_slope = nd::least_squares(x, y).slope;
  curve.analytic_exponent = scaling_exponent(coupling.effective_nu(), params.beta);
  curve.relative_error = std::abs(curve.fitted_slope + curve.analytic_exponent) / curve.analytic_exponent;
  return curve;
}

Reliability reliability_constraint(double k, double N, double M, double K, double beta, double delta,
                                   double constant) {
  if (!(k > 0.0 && N > 0.0 && M > 0.0 && K > 0.0 && beta > 0.0 && delta > 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "reliability constraint needs positive inputs");
  }
  Reliability r;
  r.lhs = std::pow(k, (1.0 + beta) / beta);
  r.rhs = constant * delta * N * std::min(M, K);
  r.slack = r.rhs / r.lhs;
  r.satisfied = r.lhs <= r.rhs;
  return r;
}

std::string curve_csv_header() { return "P,N,L,k,delta,envelope"; }

std::string curve_csv_row(const CurvePoint& p) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%zu,%.17g,%.17g", p.P, p.N, p.L, p.k, p.delta, p.envelope);
  return buf;
}

}  // namespace resexp::scale
