#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cmath>
#include <string>
#include <vector>

#include "resexp/alignlab/alignlab.hpp"
#include "resexp/certify/certify.hpp"
#include "resexp/error.hpp"
#include "resexp/io/json_io.hpp"
#include "resexp/jumpboard/jumpboard.hpp"
#include "resexp/ndcore/stats.hpp"
#include "resexp/scalelab/scalelab.hpp"
#include "resexp/version.hpp"

namespace py = pybind11;
using namespace resexp;

namespace {

cert::BoundConstants constants_from(const std::string& text) {
  return cert::bound_constants_from_json(io::parse_json(text, "constants"));
}

}  // namespace

PYBIND11_MODULE(_resexp, m) {
  m.doc() = "Residual expansion certificates, alignment and scaling tools";
  m.attr("__version__") = kVersion;

  py::register_exception<Error>(m, "ResexpError", PyExc_ValueError);

  // --- generalization bounds
  m.def(
      "eps_gen_norm",
      [](const std::string& constants, double m_, double delta, double rho) {
        cert::BoundInputs in{constants_from(constants), m_, delta, rho};
        return cert::eps_gen_norm(in);
      },
      py::arg("constants_json"), py::arg("m"), py::arg("delta") = 0.05, py::arg("rho") = 0.0);
  m.def("hoeffding_failure", &cert::hoeffding_failure, py::arg("K"), py::arg("delta_R"), py::arg("B_ell"));
  m.def(
      "data_requirement",
      [](double eps, double delta, const std::string& constants) {
        return cert::data_requirement(eps, delta, constants_from(constants));
      },
      py::arg("eps"), py::arg("delta"), py::arg("constants_json"));
  m.def(
      "certify_json",
      [](const std::string& margins, const std::string& constants, double M, double K, double delta, double rho,
         std::optional<std::string> margins_route_a) {
        const auto b = jump::margin_report_from_json(io::parse_json(margins, "margins"));
        std::optional<jump::MarginReport> a;
        if (margins_route_a) a = jump::margin_report_from_json(io::parse_json(*margins_route_a, "margins_route_A"));
        const auto report = cert::certify(b, a ? &*a : nullptr, constants_from(constants), M, K, delta, rho);
        return io::dump_json(cert::certificate_to_json(report));
      },
      py::arg("margins_json"), py::arg("constants_json"), py::arg("M"), py::arg("K"), py::arg("delta") = 0.05,
      py::arg("rho") = 0.0, py::arg("margins_route_a_json") = py::none());

  // --- alignment
  m.def(
      "theorem2_bound",
      [](std::size_t N, std::size_t M, std::size_t K, double mu_bar_sq, double tau_sq) {
        const auto cfg = align::AlignmentConfig::uniform(N, M, K, std::sqrt(mu_bar_sq / double(N)), tau_sq);
        const auto t = align::theorem2_bound(cfg);
        return py::dict(py::arg("train") = t.train, py::arg("test") = t.test, py::arg("mixed") = t.mixed,
                        py::arg("total") = t.total);
      },
      py::arg("N"), py::arg("M"), py::arg("K"), py::arg("mu_bar_sq"), py::arg("tau_sq") = 1.0);
  m.def(
      "simulate_alignment",
      [](std::size_t N, std::size_t M, std::size_t K, double mu_bar_sq, std::size_t trials, std::uint64_t seed,
         double tau_sq, std::size_t workers, bool per_sample) {
        auto cfg = align::AlignmentConfig::uniform(N, M, K, std::sqrt(mu_bar_sq / double(N)), tau_sq);
        cfg.trials = trials;
        cfg.seed = seed;
        cfg.workers = workers;
        cfg.mode = per_sample ? align::SamplingMode::PerSample : align::SamplingMode::Averages;
        align::AlignmentResult r;
        {
          py::gil_scoped_release release;
          r = align::simulate_alignment(cfg);
        }
        py::dict d;
        d["failures"] = r.failures;
        d["trials"] = r.trials;
        d["empirical_fail_rate"] = r.empirical_fail_rate;
        d["wilson_ci_upper"] = r.wilson_ci_upper;
        d["theorem2_bound"] = r.has_bound ? py::object(py::float_(r.theorem2_bound)) : py::object(py::none());
        d["dominance_ok"] = r.dominance_ok;
        return d;
      },
      py::arg("N"), py::arg("M"), py::arg("K"), py::arg("mu_bar_sq"), py::arg("trials") = 100000,
      py::arg("seed") = 0, py::arg("tau_sq") = 1.0, py::arg("workers") = 1, py::arg("per_sample") = false);

  // --- scaling
  m.def(
      "run_recursion",
      [](double beta, double c, double delta0, std::size_t steps) {
        return scale::run_recursion(scale::ScalingParams::with_rate(beta, c, delta0, steps));
      },
      py::arg("beta"), py::arg("c"), py::arg("delta0"), py::arg("steps"));
  m.def(
      "power_law_envelope",
      [](double beta, double c, double delta0, double k) {
        return scale::power_law_envelope(scale::ScalingParams::with_rate(beta, c, delta0, 0), k);
      },
      py::arg("beta"), py::arg("c"), py::arg("delta0"), py::arg("k"));
  m.def("scaling_exponent", &scale::scaling_exponent, py::arg("nu"), py::arg("beta"));
  m.def(
      "coupled_risk_curve",
      [](double P_min, double P_max, std::size_t points, double beta, double c, double delta0, double nu,
         double kappa, double a_arch, double steps_per_depth) {
        const scale::CouplingModel coupling{nu == 0.0 ? scale::CouplingKind::Linear : scale::CouplingKind::Polynomial,
                                            kappa, nu, a_arch};
        const auto curve = scale::coupled_risk_curve(scale::log_grid(P_min, P_max, points), coupling,
                                                     scale::ScalingParams::with_rate(beta, c, delta0, 0),
                                                     steps_per_depth);
        std::vector<double> P, delta, envelope;
        for (const auto& p : curve.points) {
          P.push_back(p.P);
          delta.push_back(p.delta);
          envelope.push_back(p.envelope);
        }
        py::dict d;
        d["P"] = P;
        d["delta"] = delta;
        d["envelope"] = envelope;
        d["fitted_slope"] = curve.fitted_slope;
        d["analytic_exponent"] = curve.analytic_exponent;
        d["relative_error"] = curve.relative_error;
        return d;
      },
      py::arg("P_min"), py::arg("P_max"), py::arg("points"), py::arg("beta"), py::arg("c"), py::arg("delta0") = 1.0,
      py::arg("nu") = 0.0, py::arg("kappa") = 1.0, py::arg("a_arch") = 1.0, py::arg("steps_per_depth") = 1.0);

  // --- statistics
  m.def("wilson_upper", [](std::size_t s, std::size_t n) { return nd::wilson_upper(s, n); }, py::arg("successes"),
        py::arg("trials"));
  m.def("spearman", [](const std::vector<double>& x, const std::vector<double>& y) { return nd::spearman(x, y); },
        py::arg("x"), py::arg("y"));
}
