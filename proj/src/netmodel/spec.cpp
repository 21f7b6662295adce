#include "resexp/netmodel/spec.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "resexp/error.hpp"

namespace resexp::net {

std::string_view to_string(NormKind k) {
  switch (k) {
    case NormKind::RmsNormEps: return "rmsnorm_eps";
    case NormKind::LayerNormEps: return "layernorm_eps";
    case NormKind::FixedBatchNorm: return "fixed_batchnorm";
  }
  return "?";
}

std::string_view to_string(LossKind k) {
  return k == LossKind::CrossEntropy ? "cross_entropy" : "squared";
}

std::string_view to_string(FeatureKind k) {
  return k == FeatureKind::ReluRandom ? "relu_random" : "constant";
}

NormKind parse_norm_kind(std::string_view s) {
  if (s == "rmsnorm_eps") return NormKind::RmsNormEps;
  if (s == "layernorm_eps") return NormKind::LayerNormEps;
  if (s == "fixed_batchnorm") return NormKind::FixedBatchNorm;
  throw Error(ErrorCode::ConfigError, "unknown norm_kind '" + std::string(s) + "'");
}

LossKind parse_loss_kind(std::string_view s) {
  if (s == "cross_entropy") return LossKind::CrossEntropy;
  if (s == "squared") return LossKind::Squared;
  throw Error(ErrorCode::ConfigError, "unknown loss '" + std::string(s) + "'");
}

FeatureKind parse_feature_kind(std::string_view s) {
  if (s == "relu_random") return FeatureKind::ReluRandom;
  if (s == "constant") return FeatureKind::Constant;
  throw Error(ErrorCode::ConfigError, "unknown feature kind '" + std::string(s) + "'");
}

void NetworkSpec::validate() const {
  auto fail = [](const std::string& m) { throw Error(ErrorCode::InvalidArgument, "NetworkSpec: " + m); };
  if (width == 0 || branch_width == 0 || output_dim == 0) fail("width, branch_width, output_dim must be positive");
  if (!(eps_eng > 0.0)) fail("eps_eng must be > 0");
  if (insertion_layer > depth) fail("insertion_layer must lie in [0, depth]");
  if (!gamma.empty() && gamma.size() != width) fail("gamma must have width entries");
  if (!(sigma_cap > 0.0) || !(frob_cap > 0.0) || !(head_cap > 0.0)) fail("norm caps must be positive");
  if (!(input_bound > 0.0)) fail("input_bound must be positive");
  if (!(bn_eps > 0.0)) fail("bn_eps must be positive");
  if (loss == LossKind::CrossEntropy && output_dim < 2) fail("cross entropy needs output_dim >= 2");
}

std::vector<double> NetworkSpec::gamma_vector() const {
  return gamma.empty() ? std::vector<double>(width, 1.0) : gamma;
}

double NetworkSpec::gamma_max() const {
  if (gamma.empty()) return 1.0;
  double m = 0.0;
  for (double g : gamma) m = std::max(m, std::abs(g));
  return m;
}

nd::Tensor InsertedBlock::features(const nd::Tensor& z) const {
  const std::size_t rows = z.rows();
  if (feature == FeatureKind::Constant) return nd::Tensor::filled({rows, 1}, 1.0);
  const std::size_t m = u.rows();
  nd::Tensor out({rows, m});
  for (std::size_t r = 0; r < rows; ++r) {
    const auto zr = z.row(r);
    for (std::size_t j = 0; j < m; ++j) {
      const auto ur = u.row(j);
      double s = 0.0;
      for (std::size_t i = 0; i < zr.size(); ++i) s += ur[i] * zr[i];
      out(r, j) = s > 0.0 ? s : 0.0;
    }
  }
  return out;
}

Dataset Dataset::subset(std::size_t begin, std::size_t end) const {
  Dataset d;
  d.x = nd::slice_rows(x, begin, end);
  if (!labels.empty()) {
    d.labels.assign(labels.begin() + static_cast<std::ptrdiff_t>(begin),
                    labels.begin() + static_cast<std::ptrdiff_t>(end));
  }
  if (targets.rank() == 2) d.targets = nd::slice_rows(targets, begin, end);
  return d;
}

Dataset Dataset::gather(std::span<const std::size_t> rows) const {
  Dataset d;
  d.x = nd::gather_rows(x, rows);
  if (!labels.empty()) {
    d.labels.reserve(rows.size());
    for (std::size_t r : rows) d.labels.push_back(labels[r]);
  }
  if (targets.rank() == 2) d.targets = nd::gather_rows(targets, rows);
  return d;
}

}  // namespace resexp::net
