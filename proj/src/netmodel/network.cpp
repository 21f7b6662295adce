#include "resexp/netmodel/network.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <string>

#include "resexp/error.hpp"

namespace resexp::net {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

constexpr std::size_t kChunkRows = 1024;

nd::Tensor gaussian_matrix(std::size_t rows, std::size_t cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  nd::Tensor t({rows, cols});
  for (double& v : t.data()) v = dist(rng);
  return t;
}

nd::Tensor as_batch(const nd::Tensor& x) {
  if (x.rank() == 2) return x;
  return nd::Tensor::matrix(1, x.size(), x.values());
}

// relu(z W1^T) W2^T, evaluated without a tape.
nd::Tensor branch(const ResidualLayer& layer, const nd::Tensor& z) {
  nd::Tensor a = nd::matmul(z, layer.w1.transposed());
  for (double& v : a.data()) v = v > 0.0 ? v : 0.0;
  return nd::matmul(a, layer.w2.transposed());
}

}  // namespace

// --- normalization maps ---------------------------------------------------------

nd::Tensor rmsnorm_eps(const nd::Tensor& x, std::span<const double> gamma, double eps) {
  nd::Tape tape;
  const auto xi = tape.leaf(x);
  const auto gi = tape.leaf(nd::Tensor::vector({gamma.begin(), gamma.end()}));
  return tape.value(tape.rms_norm(xi, gi, eps));
}

nd::Tensor layernorm_eps(const nd::Tensor& x, std::span<const double> gamma, double eps) {
  nd::Tape tape;
  const auto xi = tape.leaf(x);
  const auto gi = tape.leaf(nd::Tensor::vector({gamma.begin(), gamma.end()}));
  return tape.value(tape.layer_norm(xi, gi, eps));
}

nd::Tensor fixed_batchnorm(const nd::Tensor& x, std::span<const double> gamma, const FrozenNormStats& stats,
                           double eps) {
  nd::Tape tape;
  const auto xi = tape.leaf(x);
  const auto gi = tape.leaf(nd::Tensor::vector({gamma.begin(), gamma.end()}));
  return tape.value(tape.affine_norm(xi, gi, stats.mean, stats.var, stats.beta, eps));
}

double stabilized_norm_lipschitz(double gamma_max, double eps) {
  if (!(eps > 0.0)) throw Error(ErrorCode::InvalidArgument, "eps must be > 0");
  return 2.0 * gamma_max / std::sqrt(eps);
}

double batchnorm_lipschitz(std::span<const double> gamma, std::span<const double> var, double eps) {
  if (gamma.size() != var.size()) throw Error(ErrorCode::ShapeMismatch, "gamma/var size mismatch");
  double c = 0.0;
  for (std::size_t i = 0; i < gamma.size(); ++i) c = std::max(c, std::abs(gamma[i]) / std::sqrt(var[i] + eps));
  return c;
}

std::vector<double> norm_lipschitz_constant(const NetworkSpec& spec, const NetworkState* state) {
  spec.validate();
  if (spec.norm_kind != NormKind::FixedBatchNorm) {
    return std::vector<double>(spec.depth, stabilized_norm_lipschitz(spec.gamma_max(), spec.eps_eng));
  }
  if (state == nullptr || state->norm_stats.size() != spec.depth) {
    throw Error(ErrorCode::InvalidArgument, "fixed BatchNorm constants need frozen statistics");
  }
  const auto gamma = spec.gamma_vector();
  std::vector<double> out;
  for (const auto& st : state->norm_stats) out.push_back(batchnorm_lipschitz(gamma, st.var.data(), spec.bn_eps));
  return out;
}

// --- parameters -------------------------------------------------------------------

double spectral_norm(const nd::Tensor& w) {
  if (w.rank() != 2) return w.norm();
  Eigen::Map<const RowMatrix> m(w.data().data(), static_cast<Eigen::Index>(w.rows()),
                                static_cast<Eigen::Index>(w.cols()));
  Eigen::JacobiSVD<RowMatrix> svd(m);
  return svd.singularValues().size() ? svd.singularValues()(0) : 0.0;
}

nd::Tensor project_matrix(const nd::Tensor& w, double sigma_cap, double frob_cap) {
  if (!(sigma_cap > 0.0) || !(frob_cap > 0.0)) throw Error(ErrorCode::InvalidArgument, "caps must be positive");
  const double fro = w.norm();
  const double sig = spectral_norm(w);
  // matrices already on the boundary up to rounding are left alone, so projection is idempotent
  constexpr double tol = 1.0 + 1e-12;
  double scale = 1.0;
  if (fro > frob_cap * tol) scale = std::min(scale, frob_cap / fro);
  if (sig > sigma_cap * tol) scale = std::min(scale, sigma_cap / sig);
  if (scale == 1.0) return w;
  return w * scale;
}

NetworkState project_norms(const NetworkState& state, const NetworkSpec& caps) {
  NetworkState out = state;
  for (auto& layer : out.layers) {
    layer.w1 = project_matrix(layer.w1, caps.sigma_cap, caps.frob_cap);
    layer.w2 = project_matrix(layer.w2, caps.sigma_cap, caps.frob_cap);
  }
  out.head = project_matrix(out.head, caps.head_cap, std::numeric_limits<double>::infinity());
  return out;
}

bool norm_feasible(const NetworkState& state, const NetworkSpec& caps, double rel_tol) {
  auto ok = [rel_tol](const nd::Tensor& w, double s, double b) {
    return spectral_norm(w) <= s * (1.0 + rel_tol) && w.norm() <= b * (1.0 + rel_tol);
  };
  for (const auto& layer : state.layers) {
    if (!ok(layer.w1, caps.sigma_cap, caps.frob_cap) || !ok(layer.w2, caps.sigma_cap, caps.frob_cap)) return false;
  }
  return spectral_norm(state.head) <= caps.head_cap * (1.0 + rel_tol);
}

NetworkState init_state(const NetworkSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  const std::size_t n = spec.width, m = spec.branch_width;
  NetworkState s;
  for (std::size_t l = 0; l < spec.depth; ++l) {
    ResidualLayer layer;
    layer.w1 = gaussian_matrix(m, n, 1.0 / std::sqrt(static_cast<double>(n)), rng);
    layer.w2 = gaussian_matrix(n, m, 0.5 / std::sqrt(static_cast<double>(m)), rng);
    s.layers.push_back(std::move(layer));
  }
  s.head = gaussian_matrix(spec.output_dim, n, 1.0 / std::sqrt(static_cast<double>(n)), rng);
  if (spec.norm_kind == NormKind::FixedBatchNorm) {
    for (std::size_t l = 0; l < spec.depth; ++l) {
      s.norm_stats.push_back({nd::Tensor({n}), nd::Tensor::filled({n}, 1.0), nd::Tensor({n})});
    }
  }
  return project_norms(s, spec);
}

void freeze_norm_statistics(const NetworkSpec& spec, NetworkState& state, const nd::Tensor& x) {
  if (spec.norm_kind != NormKind::FixedBatchNorm) return;
  const auto gamma = spec.gamma_vector();
  nd::Tensor cur = as_batch(x);
  const double rows = static_cast<double>(cur.rows());
  state.norm_stats.resize(spec.depth);
  for (std::size_t l = 0; l < spec.depth; ++l) {
    nd::Tensor a = cur + branch(state.layers[l], cur);
    nd::Tensor mean = nd::row_mean(a);
    nd::Tensor var({a.cols()});
    for (std::size_t r = 0; r < a.rows(); ++r) {
      for (std::size_t c = 0; c < a.cols(); ++c) {
        const double d = a(r, c) - mean[c];
        var[c] += d * d;
      }
    }
    var *= 1.0 / rows;
    state.norm_stats[l] = {std::move(mean), std::move(var), nd::Tensor({a.cols()})};
    cur = fixed_batchnorm(a, gamma, state.norm_stats[l], spec.bn_eps);
  }
}

InsertedBlock make_block(const NetworkSpec& spec, FeatureKind kind, std::size_t feature_dim, std::uint64_t seed) {
  InsertedBlock b;
  b.feature = kind;
  b.v_sigma_cap = spec.sigma_cap;
  b.v_frob_cap = spec.frob_cap;
  if (kind == FeatureKind::Constant) {
    b.v = nd::Tensor({spec.width, 1});
    return b;
  }
  if (feature_dim == 0) throw Error(ErrorCode::InvalidArgument, "feature_dim must be positive");
  std::mt19937_64 rng(seed);
  b.u = gaussian_matrix(feature_dim, spec.width, 1.0 / std::sqrt(static_cast<double>(spec.width)), rng);
  b.v = nd::Tensor({spec.width, feature_dim});
  return b;
}

// --- forward ------------------------------------------------------------------------

void check_input_bound(const NetworkSpec& spec, const nd::Tensor& x) {
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double ss = 0.0;
    for (double v : x.row(r)) ss += v * v;
    if (std::sqrt(ss) > spec.input_bound * (1.0 + 1e-12)) {
      throw Error(ErrorCode::InputTooLarge, "row " + std::to_string(r) + " has norm " + std::to_string(std::sqrt(ss)) +
                                                " > B_x = " + std::to_string(spec.input_bound));
    }
  }
}

ForwardTrace record_forward(nd::Tape& tape, const NetworkSpec& spec, const NetworkState& state,
                            const InsertedBlock* block, const nd::Tensor& x) {
  if (x.cols() != spec.width) {
    throw Error(ErrorCode::ShapeMismatch, "input has " + std::to_string(x.cols()) + " features, width is " +
                                              std::to_string(spec.width));
  }
  if (state.layers.size() != spec.depth) throw Error(ErrorCode::InvalidArgument, "state depth != spec depth");
  check_input_bound(spec, x);

  ForwardTrace tr;
  const auto gamma = tape.leaf(nd::Tensor::vector(spec.gamma_vector()));
  tr.input = tape.leaf(x);
  nd::NodeId cur = tr.input;

  auto insert = [&] {
    tr.z = cur;
    if (block != nullptr) {
      const auto v = tape.leaf(block->v);
      tr.block_v = v;
      nd::NodeId psi;
      if (block->feature == FeatureKind::Constant) {
        psi = tape.leaf(nd::Tensor::filled(x.rank() == 2 ? nd::Shape{x.rows(), 1} : nd::Shape{1}, 1.0));
      } else {
        psi = tape.relu(tape.linear(cur, tape.leaf(block->u)));
      }
      cur = tape.add(cur, tape.linear(psi, v));
    }
    tr.z_block = cur;
  };

  for (std::size_t l = 0; l < spec.depth; ++l) {
    if (l == spec.insertion_layer) insert();
    const auto& layer = state.layers[l];
    const auto w1 = tape.leaf(layer.w1);
    const auto w2 = tape.leaf(layer.w2);
    tr.w1.push_back(w1);
    tr.w2.push_back(w2);
    const auto h = tape.linear(tape.relu(tape.linear(cur, w1)), w2);
    const auto a = tape.add(cur, h);
    switch (spec.norm_kind) {
      case NormKind::RmsNormEps: cur = tape.rms_norm(a, gamma, spec.eps_eng); break;
      case NormKind::LayerNormEps: cur = tape.layer_norm(a, gamma, spec.eps_eng); break;
      case NormKind::FixedBatchNorm: {
        const auto& st = state.norm_stats.at(l);
        cur = tape.affine_norm(a, gamma, st.mean, st.var, st.beta, spec.bn_eps);
        break;
      }
    }
    tr.post_norm.push_back(cur);
  }
  if (spec.insertion_layer == spec.depth) insert();
  tr.head = tape.leaf(state.head);
  tr.output = tape.linear(cur, tr.head);
  return tr;
}

nd::NodeId record_loss(nd::Tape& tape, const NetworkSpec& spec, nd::NodeId output, const Dataset& batch) {
  if (spec.loss == LossKind::CrossEntropy) return tape.softmax_cross_entropy(output, batch.labels);
  const nd::Tensor& out = tape.value(output);
  nd::Tensor target = batch.targets;
  if (out.rank() == 1 && target.rank() == 2) target = nd::Tensor::vector(target.values());
  return tape.squared_error(output, tape.leaf(std::move(target)));
}

Decomposed forward_decomposed(const NetworkSpec& spec, const NetworkState& state, const nd::Tensor& x,
                              const InsertedBlock* block) {
  nd::Tape tape;
  const auto tr = record_forward(tape, spec, state, block, x);
  Decomposed d{tape.value(tr.z), tape.value(tr.output), {}};
  for (auto id : tr.post_norm) d.post_norm.push_back(tape.value(id));
  return d;
}

double mean_loss(const NetworkSpec& spec, const NetworkState& state, const InsertedBlock* block,
                 const Dataset& data) {
  if (data.empty()) throw Error(ErrorCode::EmptyDataset, "mean_loss on empty dataset");
  double total = 0.0;
  for (std::size_t begin = 0; begin < data.size(); begin += kChunkRows) {
    const std::size_t end = std::min(data.size(), begin + kChunkRows);
    const Dataset chunk = data.subset(begin, end);
    nd::Tape tape;
    const auto tr = record_forward(tape, spec, state, block, chunk.x);
    const auto& losses = tape.value(record_loss(tape, spec, tr.output, chunk));
    for (double v : losses.data()) total += v;
  }
  return total / static_cast<double>(data.size());
}

ActivationGradients activation_gradients(const NetworkSpec& spec, const NetworkState& state, const Dataset& data) {
  if (data.empty()) throw Error(ErrorCode::EmptyDataset, "activation_gradients on empty dataset");
  ActivationGradients out{nd::Tensor({data.size(), spec.width}), nd::Tensor({data.size(), spec.width})};
  for (std::size_t begin = 0; begin < data.size(); begin += kChunkRows) {
    const std::size_t end = std::min(data.size(), begin + kChunkRows);
    const Dataset chunk = data.subset(begin, end);
    nd::Tape tape;
    const auto tr = record_forward(tape, spec, state, nullptr, chunk.x);
    const auto loss = record_loss(tape, spec, tr.output, chunk);
    tape.backward(loss, nd::Tensor::filled(tape.value(loss).shape(), 1.0));
    const auto& z = tape.value(tr.z);
    const auto& q = tape.grad(tr.z);
    std::copy(z.data().begin(), z.data().end(), out.z.data().begin() + static_cast<std::ptrdiff_t>(begin * spec.width));
    std::copy(q.data().begin(), q.data().end(), out.q.data().begin() + static_cast<std::ptrdiff_t>(begin * spec.width));
  }
  return out;
}

// --- constants -------------------------------------------------------------------------

std::vector<double> layer_sensitivities(std::span<const LayerConstants> layers, double L_top, double B_star) {
  std::vector<double> lambda(layers.size());
  double tail = 1.0;  // prod_{k>l} c_k (1 + s_k)
  for (std::size_t l = layers.size(); l-- > 0;) {
    lambda[l] = L_top * layers[l].lip_param * B_star * layers[l].c * tail;
    tail *= layers[l].c * (1.0 + layers[l].s);
  }
  return lambda;
}

ArchConstants compute_arch_constants(const NetworkSpec& spec, const NetworkState& state, const InsertedBlock* block) {
  spec.validate();
  ArchConstants k;
  const double n = static_cast<double>(spec.width);
  const std::vector<double> c = norm_lipschitz_constant(spec, &state);
  k.gamma_max = spec.gamma_max();
  k.B_x = spec.input_bound;

  std::vector<LayerConstants> layers;
  for (std::size_t l = 0; l < spec.depth; ++l) {
    LayerConstants lc;
    lc.c = c[l];
    lc.s = spec.sigma_cap * spec.sigma_cap;
    // |W2 relu(W1 z) - W2' relu(W1' z)| <= sigma_cap (|dW1|_F + |dW2|_F) |z| <= sqrt(2) sigma_cap |d theta|_F |z|
    lc.lip_param = std::sqrt(2.0) * spec.sigma_cap;
    lc.b = std::sqrt(2.0) * spec.frob_cap;
    lc.d = 2 * spec.width * spec.branch_width;
    layers.push_back(lc);
  }

  if (spec.norm_kind == NormKind::FixedBatchNorm) {
    // Affine map: propagate the reachable-set radius layer by layer.
    const auto gamma = spec.gamma_vector();
    double radius = spec.input_bound;
    k.B_norm = 0.0;
    for (std::size_t l = 0; l < spec.depth; ++l) {
      const auto& st = state.norm_stats.at(l);
      double offset = 0.0;
      for (std::size_t i = 0; i < spec.width; ++i) {
        const double o = st.beta[i] - gamma[i] * st.mean[i] / std::sqrt(st.var[i] + spec.bn_eps);
        offset += o * o;
      }
      radius = c[l] * (1.0 + layers[l].s) * radius + std::sqrt(offset);
      k.B_norm = std::max(k.B_norm, radius);
    }
  } else {
    k.B_norm = k.gamma_max * std::sqrt(n);
  }
  k.B_star = std::max(k.B_x, k.B_norm);
  double final_radius = spec.depth > 0 ? k.B_norm : k.B_x;

  if (block != nullptr) {
    LayerConstants bc;
    bc.c = 1.0;
    if (block->feature == FeatureKind::Constant) {
      // h(z) = V 1: |dh| <= |dV|_F independent of z, so L^(p) B_star = 1.
      bc.s = 0.0;
      bc.lip_param = 1.0 / k.B_star;
    } else {
      const double u_sigma = spectral_norm(block->u);
      bc.s = u_sigma * block->v_sigma_cap;
      bc.lip_param = u_sigma;
    }
    bc.b = block->v_frob_cap;
    bc.d = block->v.size();
    const double base = k.B_star;
    k.B_star = std::max(k.B_star, (1.0 + bc.s) * base);
    if (spec.insertion_layer == spec.depth) final_radius *= (1.0 + bc.s);
    if (bc.s == 0.0 && block->feature == FeatureKind::Constant) {
      k.B_star = base + block->v_frob_cap;
      if (spec.insertion_layer == spec.depth) final_radius = (spec.depth > 0 ? k.B_norm : k.B_x) + block->v_frob_cap;
      bc.lip_param = 1.0 / k.B_star;
    }
    layers.insert(layers.begin() + static_cast<std::ptrdiff_t>(spec.insertion_layer), bc);
  }

  k.L_top = spec.head_cap;
  k.B_0 = 0.0;
  const double b_out = k.B_0 + k.L_top * final_radius;
  if (spec.loss == LossKind::CrossEntropy) {
    // logsumexp(z) - z_y <= log C + max_j z_j - z_y <= log C + sqrt(2)|z|; |grad| = |p - e_y| <= sqrt(2)
    k.B_ell = std::log(static_cast<double>(spec.output_dim)) + std::sqrt(2.0) * b_out;
    k.L_ell = std::sqrt(2.0);
  } else {
    const double r = b_out + spec.target_bound;
    k.B_ell = 0.5 * r * r;
    k.L_ell = r;
  }

  k.layers = std::move(layers);
  k.lambda = layer_sensitivities(k.layers, k.L_top, k.B_star);
  for (std::size_t i = 0; i < k.layers.size(); ++i) {
    k.d += k.layers[i].d;
    k.b_bar = std::max(k.b_bar, k.layers[i].b);
    k.lambda_max = std::max(k.lambda_max, k.lambda[i]);
  }
  return k;
}

}  // namespace resexp::net
