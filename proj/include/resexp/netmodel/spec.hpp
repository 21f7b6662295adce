#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "resexp/ndcore/tensor.hpp"

namespace resexp::net {

enum class NormKind { RmsNormEps, LayerNormEps, FixedBatchNorm };
enum class LossKind { CrossEntropy, Squared };
enum class FeatureKind { ReluRandom, Constant };

std::string_view to_string(NormKind k);
std::string_view to_string(LossKind k);
std::string_view to_string(FeatureKind k);
NormKind parse_norm_kind(std::string_view s);
LossKind parse_loss_kind(std::string_view s);
FeatureKind parse_feature_kind(std::string_view s);

// Architecture of a post-normalized residual network
//   T_l(z) = Norm_l(z + W2_l relu(W1_l z)),  l = 0..depth-1,
// followed by a linear head. The network input lives in R^width.
struct NetworkSpec {
  std::size_t depth = 2;
  std::size_t width = 16;
  std::size_t branch_width = 16;
  std::size_t output_dim = 4;
  NormKind norm_kind = NormKind::RmsNormEps;
  double eps_eng = 1e-2;
  std::vector<double> gamma;  // empty means all ones
  std::size_t insertion_layer = 2;
  // Per-matrix caps for both branch matrices: |W|_sigma <= sigma_cap, |W|_F <= frob_cap.
  double sigma_cap = 1.0;
  double frob_cap = 4.0;
  double head_cap = 4.0;     // spectral cap on the head, i.e. L_top
  double input_bound = 8.0;  // B_x
  double bn_eps = 1e-5;
  LossKind loss = LossKind::CrossEntropy;
  double target_bound = 0.0;  // |y| bound for squared loss

  void validate() const;
  std::vector<double> gamma_vector() const;
  double gamma_max() const;
};

struct ResidualLayer {
  nd::Tensor w1;  // (branch_width, width)
  nd::Tensor w2;  // (width, branch_width)
};

// Running statistics for fixed BatchNorm, one set per layer.
struct FrozenNormStats {
  nd::Tensor mean;
  nd::Tensor var;
  nd::Tensor beta;
};

struct NetworkState {
  std::vector<ResidualLayer> layers;
  nd::Tensor head;  // (output_dim, width)
  std::vector<FrozenNormStats> norm_stats;

  bool operator==(const NetworkState& o) const {
    if (layers.size() != o.layers.size() || norm_stats.size() != o.norm_stats.size() || !(head == o.head))
      return false;
    for (std::size_t i = 0; i < layers.size(); ++i)
      if (!(layers[i].w1 == o.layers[i].w1) || !(layers[i].w2 == o.layers[i].w2)) return false;
    for (std::size_t i = 0; i < norm_stats.size(); ++i)
      if (!(norm_stats[i].mean == o.norm_stats[i].mean) || !(norm_stats[i].var == o.norm_stats[i].var) ||
          !(norm_stats[i].beta == o.norm_stats[i].beta))
        return false;
    return true;
  }
};

// Zero-output residual block h(z) = V psi_U(z) inserted after layer l*.
// With V = 0 the expanded network computes exactly the old one.
struct InsertedBlock {
  FeatureKind feature = FeatureKind::ReluRandom;
  nd::Tensor u;  // (m, width); unused for Constant features
  nd::Tensor v;  // (width, m)
  double v_sigma_cap = 1.0;
  double v_frob_cap = 4.0;

  std::size_t feature_dim() const { return v.cols(); }
  // psi_U(z) row-wise for a batch z (rows, width).
  nd::Tensor features(const nd::Tensor& z) const;
};

// Labelled sample set. Inputs are rows of x; classification uses labels,
// regression uses targets.
struct Dataset {
  nd::Tensor x;
  std::vector<int> labels;
  nd::Tensor targets;

  std::size_t size() const { return x.rank() == 2 ? x.rows() : 0; }
  bool empty() const { return size() == 0; }
  Dataset subset(std::size_t begin, std::size_t end) const;
  Dataset gather(std::span<const std::size_t> rows) const;
};

struct LayerConstants {
  double c = 1.0;          // Lipschitz constant of the normalization map
  double s = 0.0;          // input Lipschitz constant of the residual branch
  double lip_param = 0.0;  // L^(p): parameter sensitivity per unit input norm
  double b = 0.0;          // Frobenius radius of the layer parameters
  std::size_t d = 0;       // number of trainable parameters
};

struct ArchConstants {
  double B_ell = 0.0;
  double L_ell = 0.0;
  double L_top = 0.0;
  double B_0 = 0.0;
  double gamma_max = 0.0;
  double B_x = 0.0;
  double B_norm = 0.0;
  double B_star = 0.0;
  std::vector<LayerConstants> layers;
  std::size_t d = 0;
  double b_bar = 0.0;
  std::vector<double> lambda;
  double lambda_max = 0.0;

  std::size_t num_layers() const { return layers.size(); }
};

}  // namespace resexp::net
