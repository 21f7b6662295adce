#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "resexp/ndcore/tensor.hpp"

namespace resexp::nd {

using NodeId = std::size_t;

enum class Op {
  Leaf,
  Add,
  Sub,
  Mul,
  Scale,
  MatMul,
  Linear,
  AddRow,
  Relu,
  Sum,
  Mean,
  RmsNorm,
  LayerNorm,
  AffineNorm,
  SoftmaxCrossEntropy,
  SquaredError,
};

// Reverse-mode tape. Recording a primitive evaluates it immediately (the
// forward pass); backward() then runs once over the recorded graph.
//
// Row-wise primitives (norms, losses, AddRow) treat a rank-2 tensor as a
// batch of rows and a rank-1 tensor as a single row.
class Tape {
 public:
  NodeId leaf(Tensor value);

  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId scale(NodeId a, double s);
  NodeId matmul(NodeId a, NodeId b);
  // x * W^T with W of shape (out, in); x is (batch, in) or (in).
  NodeId linear(NodeId x, NodeId w);
  NodeId add_row(NodeId x, NodeId bias);
  // Subgradient at 0 is 0.
  NodeId relu(NodeId a);
  NodeId sum(NodeId a);
  NodeId mean(NodeId a);

  // gamma * x / sqrt(|x|^2/N + eps), per row.
  NodeId rms_norm(NodeId x, NodeId gamma, double eps);
  // RMS normalization of the centered row P x.
  NodeId layer_norm(NodeId x, NodeId gamma, double eps);
  // Frozen-statistics batch normalization: gamma * (x - mean) / sqrt(var + eps) + beta.
  NodeId affine_norm(NodeId x, NodeId gamma, const Tensor& mean, const Tensor& var, const Tensor& beta, double eps);

  // Per-row losses, output shape (rows).
  NodeId softmax_cross_entropy(NodeId logits, std::span<const int> labels);
  NodeId squared_error(NodeId prediction, NodeId target);

  const Tensor& value(NodeId id) const;
  Op op(NodeId id) const;
  std::span<const NodeId> parents(NodeId id) const;
  std::size_t size() const noexcept { return nodes_.size(); }

  // Seeds d(objective)/d(output) = seed and accumulates gradients for every
  // recorded node. May be called once per recording.
  void backward(NodeId output, const Tensor& seed);
  void backward(NodeId scalar_output);  // seed = 1
  bool differentiated() const noexcept { return consumed_; }

  // Gradient of the seeded objective w.r.t. a node; zero if no path exists.
  const Tensor& grad(NodeId id) const;

 private:
  struct Node {
    Op op = Op::Leaf;
    std::vector<NodeId> parents;
    Tensor value;
    double scalar = 0.0;
    std::vector<int> labels;
    std::vector<Tensor> aux;
  };

  NodeId push(Node node);
  const Node& node(NodeId id) const;
  void accumulate(NodeId id, const Tensor& g);
  void backprop_node(NodeId id);

  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
  std::vector<bool> has_grad_;
  bool consumed_ = false;
};

}  // namespace resexp::nd
