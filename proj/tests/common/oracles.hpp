#pragma once
// Independent reference evaluators shared by the unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "resexp/ndcore/tape.hpp"

namespace oracle {

using resexp::nd::NodeId;
using resexp::nd::Tape;
using resexp::nd::Tensor;

// --- random computation graphs ------------------------------------------------

enum class Kind { Linear, MatMul, Add, Sub, Mul, Scale, Relu, RmsNorm, LayerNorm, AffineNorm, AddRow };
enum class Objective { CrossEntropy, Squared, Weighted };

struct Instr {
  Kind kind;
  std::size_t a = 0, b = 0;  // node slots
  double scalar = 0.0;
  Tensor mean, var, beta;
};

// A recipe replayed on a fresh tape: slots [0, leaves.size()) are leaves, each
// instruction appends one slot.
struct Graph {
  std::vector<Tensor> leaves;
  std::vector<Instr> code;
  Objective objective = Objective::Squared;
  std::size_t target_leaf = 0;  // squared / weighted objectives
  std::vector<int> labels;

  struct Replay {
    std::vector<NodeId> slots;
    NodeId objective = 0;
  };

  Replay replay(Tape& t, const std::vector<Tensor>& values) const {
    Replay r;
    for (const auto& v : values) r.slots.push_back(t.leaf(v));
    for (const auto& in : code) {
      const NodeId a = r.slots[in.a], b = r.slots[in.b];
      NodeId out = 0;
      switch (in.kind) {
        case Kind::Linear: out = t.linear(a, b); break;
        case Kind::MatMul: out = t.matmul(a, b); break;
        case Kind::Add: out = t.add(a, b); break;
        case Kind::Sub: out = t.sub(a, b); break;
        case Kind::Mul: out = t.mul(a, b); break;
        case Kind::Scale: out = t.scale(a, in.scalar); break;
        case Kind::Relu: out = t.relu(a); break;
        case Kind::RmsNorm: out = t.rms_norm(a, b, in.scalar); break;
        case Kind::LayerNorm: out = t.layer_norm(a, b, in.scalar); break;
        case Kind::AffineNorm: out = t.affine_norm(a, b, in.mean, in.var, in.beta, in.scalar); break;
        case Kind::AddRow: out = t.add_row(a, b); break;
      }
      r.slots.push_back(out);
    }
    const NodeId last = r.slots.back();
    switch (objective) {
      case Objective::CrossEntropy: r.objective = t.mean(t.softmax_cross_entropy(last, labels)); break;
      case Objective::Squared: r.objective = t.mean(t.squared_error(last, r.slots[target_leaf])); break;
      case Objective::Weighted: r.objective = t.sum(t.mul(last, r.slots[target_leaf])); break;
    }
    return r;
  }

  double value(const std::vector<Tensor>& values) const {
    Tape t;
    return t.value(replay(t, values).objective).item();
  }

  // Smallest nonzero |input| over relu nodes; finite differences are unreliable near a kink.
  double relu_margin() const {
    Tape t;
    const auto r = replay(t, leaves);
    double m = INFINITY;
    for (std::size_t i = 0; i < code.size(); ++i) {
      if (code[i].kind != Kind::Relu) continue;
      for (double v : t.value(r.slots[code[i].a]).data())
        if (v != 0.0) m = std::min(m, std::abs(v));
    }
    return m;
  }
};

inline Tensor random_tensor(resexp::nd::Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> n(0.0, scale);
  for (double& v : t.data()) v = n(rng);
  return t;
}

inline Graph random_graph(std::mt19937_64& rng) {
  auto uni = [&](std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(rng); };
  Graph g;
  const std::size_t batch = uni(1, 4);
  struct Slot {
    std::size_t cols;
    bool batched;
  };
  std::vector<Slot> shapes;
  auto add_leaf = [&](Tensor t, Slot s) {
    g.leaves.push_back(std::move(t));
    shapes.push_back(s);
    return g.leaves.size() - 1;
  };
  // Pool entries are leaf indices or code_flag + instruction index; slots are renumbered at the end.
  const std::size_t cols0 = uni(2, 5);
  add_leaf(random_tensor({batch, cols0}, rng), {cols0, true});
  std::vector<Instr> code;
  std::vector<Slot> node_shapes;
  const std::size_t code_flag = std::size_t{1} << 32;
  std::vector<std::size_t> pool{0};
  auto shape_of = [&](std::size_t ref) { return ref & code_flag ? node_shapes[ref - code_flag] : shapes[ref]; };

  const std::size_t steps = uni(2, 6);
  for (std::size_t s = 0; s < steps; ++s) {
    const std::size_t a = pool[uni(0, pool.size() - 1)];
    const Slot sa = shape_of(a);
    Instr in;
    in.a = a;
    Slot out = sa;
    switch (uni(0, 10)) {
      case 0: {
        const std::size_t n2 = uni(2, 5);
        in.kind = Kind::Linear;
        in.b = add_leaf(random_tensor({n2, sa.cols}, rng, 0.7), {sa.cols, false});
        out.cols = n2;
        break;
      }
      case 1: {
        const std::size_t n2 = uni(2, 5);
        in.kind = Kind::MatMul;
        in.b = add_leaf(random_tensor({sa.cols, n2}, rng, 0.7), {n2, false});
        out.cols = n2;
        break;
      }
      case 2:
      case 3:
      case 4: {
        static constexpr Kind binary[] = {Kind::Add, Kind::Sub, Kind::Mul};
        in.kind = binary[uni(0, 2)];
        std::vector<std::size_t> same;
        for (std::size_t p : pool)
          if (shape_of(p).cols == sa.cols && shape_of(p).batched) same.push_back(p);
        in.b = uni(0, 1) && !same.empty() ? same[uni(0, same.size() - 1)]
                                          : add_leaf(random_tensor({batch, sa.cols}, rng), {sa.cols, true});
        break;
      }
      case 5:
        in.kind = Kind::Scale;
        in.scalar = std::uniform_real_distribution<double>(-2.0, 2.0)(rng);
        break;
      case 6: in.kind = Kind::Relu; break;
      case 7:
      case 8: {
        in.kind = sa.cols >= 2 && uni(0, 1) ? Kind::LayerNorm : Kind::RmsNorm;
        in.b = add_leaf(random_tensor({sa.cols}, rng), {sa.cols, false});
        in.scalar = std::uniform_real_distribution<double>(0.05, 1.0)(rng);
        break;
      }
      case 9: {
        in.kind = Kind::AffineNorm;
        in.b = add_leaf(random_tensor({sa.cols}, rng), {sa.cols, false});
        in.mean = random_tensor({sa.cols}, rng);
        in.var = random_tensor({sa.cols}, rng);
        for (double& v : in.var.data()) v = v * v + 0.1;
        in.beta = random_tensor({sa.cols}, rng);
        in.scalar = 1e-3;
        break;
      }
      default:
        in.kind = Kind::AddRow;
        in.b = add_leaf(random_tensor({sa.cols}, rng), {sa.cols, false});
        break;
    }
    code.push_back(in);
    node_shapes.push_back(out);
    pool.push_back(code_flag + code.size() - 1);
  }
  // Make sure the objective depends on the last instruction.
  const Slot last = node_shapes.back();
  switch (uni(0, 2)) {
    case 0:
      g.objective = Objective::CrossEntropy;
      for (std::size_t r = 0; r < batch; ++r) g.labels.push_back(static_cast<int>(uni(0, last.cols - 1)));
      break;
    case 1:
      g.objective = Objective::Squared;
      g.target_leaf = add_leaf(random_tensor({batch, last.cols}, rng), {last.cols, true});
      break;
    default:
      g.objective = Objective::Weighted;
      g.target_leaf = add_leaf(random_tensor({batch, last.cols}, rng), {last.cols, true});
      break;
  }
  // Renumber: leaves keep their index, instruction outputs follow all leaves.
  const std::size_t nleaves = g.leaves.size();
  auto slot = [&](std::size_t ref) { return ref & code_flag ? nleaves + (ref - code_flag) : ref; };
  for (auto& in : code) {
    in.a = slot(in.a);
    in.b = slot(in.b);
  }
  g.code = std::move(code);
  return g;
}

// Max over all leaf entries of |analytic - central difference| / max(|analytic|, |fd|, floor).
inline double gradient_check(const Graph& g, double h = 1e-5, double floor = 1e-3) {
  Tape t;
  const auto r = g.replay(t, g.leaves);
  t.backward(r.objective);
  double worst = 0.0;
  for (std::size_t k = 0; k < g.leaves.size(); ++k) {
    const Tensor analytic = t.grad(r.slots[k]);
    for (std::size_t e = 0; e < g.leaves[k].size(); ++e) {
      auto plus = g.leaves, minus = g.leaves;
      plus[k][e] += h;
      minus[k][e] -= h;
      const double fd = (g.value(plus) - g.value(minus)) / (2.0 * h);
      const double a = analytic[e];
      worst = std::max(worst, std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), floor}));
    }
  }
  return worst;
}

inline Graph random_smooth_graph(std::mt19937_64& rng, double min_relu_margin = 1e-3) {
  for (;;) {
    Graph g = random_graph(rng);
    if (g.relu_margin() > min_relu_margin) return g;
  }
}

// --- closed-form formulas, evaluated directly in extended precision ------------

inline double eps_gen(double B, double L_ell, double d, double b_bar, double L, double lambda_max, double m,
                      double delta, double rho) {
  using ld = long double;
  const ld r = rho > 0.0 ? ld(rho) : 1.0L / std::sqrt(ld(m));
  const ld inner = std::log(2.0L * b_bar * L * L_ell * lambda_max / r + 1.0L);
  const ld complexity = 2.0L * B * std::sqrt(2.0L * d * inner / m);
  const ld confidence = 3.0L * B * std::sqrt(std::log(2.0L / delta) / (2.0L * m));
  return static_cast<double>(complexity + 2.0L * r + confidence);
}

inline double hoeffding(double K, double dR, double B) {
  using ld = long double;
  return static_cast<double>(6.0L * std::exp(-ld(K) * dR * dR / (8.0L * B * B)));
}

inline double chebyshev_alignment(double C, double tau_sq, double M, double K, double mu_sq, double trace) {
  using ld = long double;
  const ld a = 4.0L * C * tau_sq;
  return static_cast<double>(a / (M * mu_sq) + a / (K * mu_sq) + a * trace / (ld(K) * M * mu_sq * mu_sq));
}

inline double envelope(double delta0, double beta, double c, double k) {
  using ld = long double;
  return static_cast<double>(std::pow(std::pow(ld(delta0), -ld(beta)) + ld(beta) * c * k, -1.0L / beta));
}

inline double exponent(double nu, double beta) { return (1.0 - nu) / ((3.0 - nu) * beta); }

inline double rel_err(double a, double b) {
  if (a == b) return 0.0;
  return std::abs(a - b) / std::max(std::abs(a), std::abs(b));
}

}  // namespace oracle
