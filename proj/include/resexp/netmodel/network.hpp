#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "resexp/ndcore/tape.hpp"
#include "resexp/netmodel/spec.hpp"

namespace resexp::net {

// --- normalization maps (plain evaluation, row-wise) ------------------------

nd::Tensor rmsnorm_eps(const nd::Tensor& x, std::span<const double> gamma, double eps);
nd::Tensor layernorm_eps(const nd::Tensor& x, std::span<const double> gamma, double eps);
nd::Tensor fixed_batchnorm(const nd::Tensor& x, std::span<const double> gamma, const FrozenNormStats& stats,
                           double eps);

// Certified global Lipschitz bound 2*gamma_max/sqrt(eps) of the stabilized RMS/Layer norms.
double stabilized_norm_lipschitz(double gamma_max, double eps);
// max_i |gamma_i| / sqrt(var_i + eps) for frozen-statistics BatchNorm.
double batchnorm_lipschitz(std::span<const double> gamma, std::span<const double> var, double eps);
// Per-layer certified bound c_l. BatchNorm requires state statistics.
std::vector<double> norm_lipschitz_constant(const NetworkSpec& spec, const NetworkState* state = nullptr);

// --- parameters --------------------------------------------------------------

double spectral_norm(const nd::Tensor& w);
// Radial projection onto {|W|_sigma <= s, |W|_F <= b}; feasible input is returned unchanged.
nd::Tensor project_matrix(const nd::Tensor& w, double sigma_cap, double frob_cap);
NetworkState project_norms(const NetworkState& state, const NetworkSpec& caps);
bool norm_feasible(const NetworkState& state, const NetworkSpec& caps, double rel_tol = 1e-12);

NetworkState init_state(const NetworkSpec& spec, std::uint64_t seed);
// Computes frozen BatchNorm statistics layer by layer on `x` (no-op for other norms).
void freeze_norm_statistics(const NetworkSpec& spec, NetworkState& state, const nd::Tensor& x);

InsertedBlock make_block(const NetworkSpec& spec, FeatureKind kind, std::size_t feature_dim, std::uint64_t seed);

// --- forward -----------------------------------------------------------------

struct ForwardTrace {
  nd::NodeId input = 0;
  nd::NodeId z = 0;        // activation at the insertion layer (before the block)
  nd::NodeId z_block = 0;  // activation after the inserted block (== z without block)
  nd::NodeId output = 0;
  std::vector<nd::NodeId> post_norm;
  std::vector<nd::NodeId> w1, w2;
  nd::NodeId head = 0;
  std::optional<nd::NodeId> block_v;
};

// Records f_top(z + h(z)), z = f_bot(x), on the tape. x is (batch, width) or (width).
ForwardTrace record_forward(nd::Tape& tape, const NetworkSpec& spec, const NetworkState& state,
                            const InsertedBlock* block, const nd::Tensor& x);
// Per-sample loss vector for the recorded output.
nd::NodeId record_loss(nd::Tape& tape, const NetworkSpec& spec, nd::NodeId output, const Dataset& batch);

void check_input_bound(const NetworkSpec& spec, const nd::Tensor& x);

struct Decomposed {
  nd::Tensor z;
  nd::Tensor output;
  std::vector<nd::Tensor> post_norm;
};
Decomposed forward_decomposed(const NetworkSpec& spec, const NetworkState& state, const nd::Tensor& x,
                              const InsertedBlock* block = nullptr);

// Mean loss over the dataset, evaluated in fixed-size chunks with a fixed summation order.
double mean_loss(const NetworkSpec& spec, const NetworkState& state, const InsertedBlock* block,
                 const Dataset& data);

// Per-sample activation gradients q_i = d loss_i / d z_i at the insertion layer
// (rows), together with the activations z_i.
struct ActivationGradients {
  nd::Tensor z;
  nd::Tensor q;
};
ActivationGradients activation_gradients(const NetworkSpec& spec, const NetworkState& state, const Dataset& data);

// --- constants -----------------------------------------------------------------

// Lambda_l = L_top * L_l^(p) * B_star * c_l * prod_{k>l} c_k (1 + s_k)
std::vector<double> layer_sensitivities(std::span<const LayerConstants> layers, double L_top, double B_star);

// Constants of the class described by spec; with a block, of the expanded class.
ArchConstants compute_arch_constants(const NetworkSpec& spec, const NetworkState& state,
                                     const InsertedBlock* block = nullptr);

}  // namespace resexp::net
