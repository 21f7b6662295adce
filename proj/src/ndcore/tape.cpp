#include "resexp/ndcore/tape.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "resexp/error.hpp"

namespace resexp::nd {

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw Error(ErrorCode::ShapeMismatch, what);
}

Shape rows_shape(const Tensor& t) { return Shape{t.rows()}; }

double row_scale(std::span<const double> x, double eps) {
  double ss = 0.0;
  for (double v : x) ss += v * v;
  return std::sqrt(ss / static_cast<double>(x.size()) + eps);
}

// y = gamma * c / s(c); returns dL/dc for one row and accumulates dL/dgamma.
void rms_row_backward(std::span<const double> c, std::span<const double> gamma, std::span<const double> gy,
                      double eps, std::span<double> gc, std::span<double> ggamma) {
  const std::size_t n = c.size();
  const double s = row_scale(c, eps);
  double inner = 0.0;
  for (std::size_t j = 0; j < n; ++j) inner += gamma[j] * gy[j] * c[j];
  const double k = inner / (static_cast<double>(n) * s * s * s);
  for (std::size_t j = 0; j < n; ++j) {
    gc[j] = gamma[j] * gy[j] / s - c[j] * k;
    ggamma[j] += gy[j] * c[j] / s;
  }
}

}  // namespace

NodeId Tape::push(Node n) {
  if (consumed_) throw Error(ErrorCode::TapeConsumed, "cannot record after backward");
  for (NodeId p : n.parents) {
    if (p >= nodes_.size()) throw Error(ErrorCode::UnknownNode, "parent " + std::to_string(p));
  }
  if (!n.value.all_finite()) throw Error(ErrorCode::NonFinite, "non-finite value produced");
  nodes_.push_back(std::move(n));
  return nodes_.size() - 1;
}

const Tape::Node& Tape::node(NodeId id) const {
  if (id >= nodes_.size()) throw Error(ErrorCode::UnknownNode, "node " + std::to_string(id));
  return nodes_[id];
}

const Tensor& Tape::value(NodeId id) const { return node(id).value; }
Op Tape::op(NodeId id) const { return node(id).op; }
std::span<const NodeId> Tape::parents(NodeId id) const { return node(id).parents; }

NodeId Tape::leaf(Tensor value) {
  Node n;
  n.op = Op::Leaf;
  n.value = std::move(value);
  return push(std::move(n));
}

NodeId Tape::add(NodeId a, NodeId b) {
  const Tensor& x = value(a);
  const Tensor& y = value(b);
  require(x.shape() == y.shape(), "add " + shape_string(x.shape()) + " vs " + shape_string(y.shape()));
  return push({Op::Add, {a, b}, x + y});
}

NodeId Tape::sub(NodeId a, NodeId b) {
  const Tensor& x = value(a);
  const Tensor& y = value(b);
  require(x.shape() == y.shape(), "sub " + shape_string(x.shape()) + " vs " + shape_string(y.shape()));
  return push({Op::Sub, {a, b}, x - y});
}

NodeId Tape::mul(NodeId a, NodeId b) {
  const Tensor& x = value(a);
  const Tensor& y = value(b);
  require(x.shape() == y.shape(), "mul " + shape_string(x.shape()) + " vs " + shape_string(y.shape()));
  Tensor out = x;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= y[i];
  return push({Op::Mul, {a, b}, std::move(out)});
}

NodeId Tape::scale(NodeId a, double s) {
  Node n{Op::Scale, {a}, value(a) * s};
  n.scalar = s;
  return push(std::move(n));
}

NodeId Tape::matmul(NodeId a, NodeId b) { return push({Op::MatMul, {a, b}, nd::matmul(value(a), value(b))}); }

NodeId Tape::linear(NodeId xi, NodeId wi) {
  const Tensor& x = value(xi);
  const Tensor& w = value(wi);
  require(w.rank() == 2 && x.rank() >= 1 && x.cols() == w.cols(),
          "linear " + shape_string(x.shape()) + " * " + shape_string(w.shape()) + "^T");
  const std::size_t batch = x.rows(), in = w.cols(), out = w.rows();
  Tensor y(x.rank() == 1 ? Shape{out} : Shape{batch, out});
  for (std::size_t b = 0; b < batch; ++b) {
    const auto xr = x.row(b);
    auto yr = y.row(b);
    for (std::size_t j = 0; j < out; ++j) {
      const auto wr = w.row(j);
      double s = 0.0;
      for (std::size_t i = 0; i < in; ++i) s += xr[i] * wr[i];
      yr[j] = s;
    }
  }
  return push({Op::Linear, {xi, wi}, std::move(y)});
}

NodeId Tape::add_row(NodeId xi, NodeId bi) {
  const Tensor& x = value(xi);
  const Tensor& b = value(bi);
  require(b.rank() == 1 && b.size() == x.cols(), "add_row bias " + shape_string(b.shape()));
  Tensor y = x;
  for (std::size_t r = 0; r < y.rows(); ++r) {
    auto yr = y.row(r);
    for (std::size_t c = 0; c < yr.size(); ++c) yr[c] += b[c];
  }
  return push({Op::AddRow, {xi, bi}, std::move(y)});
}

NodeId Tape::relu(NodeId a) {
  Tensor y = value(a);
  for (double& v : y.data()) v = v > 0.0 ? v : 0.0;
  return push({Op::Relu, {a}, std::move(y)});
}

NodeId Tape::sum(NodeId a) {
  double s = 0.0;
  for (double v : value(a).data()) s += v;
  return push({Op::Sum, {a}, Tensor::scalar(s)});
}

NodeId Tape::mean(NodeId a) {
  const Tensor& x = value(a);
  double s = 0.0;
  for (double v : x.data()) s += v;
  return push({Op::Mean, {a}, Tensor::scalar(s / static_cast<double>(x.size()))});
}

NodeId Tape::rms_norm(NodeId xi, NodeId gi, double eps) {
  if (!(eps > 0.0)) throw Error(ErrorCode::InvalidArgument, "rms_norm eps must be > 0");
  const Tensor& x = value(xi);
  const Tensor& g = value(gi);
  require(g.rank() == 1 && g.size() == x.cols(), "rms_norm gamma " + shape_string(g.shape()));
  Tensor y = x;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const double s = row_scale(x.row(r), eps);
    auto yr = y.row(r);
    for (std::size_t c = 0; c < yr.size(); ++c) yr[c] = g[c] * yr[c] / s;
  }
  Node n{Op::RmsNorm, {xi, gi}, std::move(y)};
  n.scalar = eps;
  return push(std::move(n));
}

NodeId Tape::layer_norm(NodeId xi, NodeId gi, double eps) {
  if (!(eps > 0.0)) throw Error(ErrorCode::InvalidArgument, "layer_norm eps must be > 0");
  const Tensor& x = value(xi);
  const Tensor& g = value(gi);
  require(g.rank() == 1 && g.size() == x.cols(), "layer_norm gamma " + shape_string(g.shape()));
  Tensor y = x;
  const double n = static_cast<double>(x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto yr = y.row(r);
    double m = 0.0;
    for (double v : yr) m += v;
    m /= n;
    for (double& v : yr) v -= m;
    const double s = row_scale(yr, eps);
    for (std::size_t c = 0; c < yr.size(); ++c) yr[c] = g[c] * yr[c] / s;
  }
  Node node_{Op::LayerNorm, {xi, gi}, std::move(y)};
  node_.scalar = eps;
  return push(std::move(node_));
}

NodeId Tape::affine_norm(NodeId xi, NodeId gi, const Tensor& mean, const Tensor& var, const Tensor& beta,
                         double eps) {
  if (!(eps > 0.0)) throw Error(ErrorCode::InvalidArgument, "affine_norm eps must be > 0");
  const Tensor& x = value(xi);
  const Tensor& g = value(gi);
  const std::size_t n = x.cols();
  require(g.size() == n && mean.size() == n && var.size() == n && beta.size() == n, "affine_norm stats size");
  Tensor y = x;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto yr = y.row(r);
    for (std::size_t c = 0; c < n; ++c) {
      if (var[c] < 0.0) throw Error(ErrorCode::InvalidArgument, "negative running variance");
      yr[c] = g[c] * (yr[c] - mean[c]) / std::sqrt(var[c] + eps) + beta[c];
    }
  }
  Node node_{Op::AffineNorm, {xi, gi}, std::move(y)};
  node_.scalar = eps;
  node_.aux = {mean, var, beta};
  return push(std::move(node_));
}

NodeId Tape::softmax_cross_entropy(NodeId li, std::span<const int> labels) {
  const Tensor& z = value(li);
  require(z.rank() >= 1 && labels.size() == z.rows(), "softmax_cross_entropy label count");
  Tensor out(rows_shape(z));
  for (std::size_t r = 0; r < z.rows(); ++r) {
    const auto zr = z.row(r);
    const int y = labels[r];
    if (y < 0 || static_cast<std::size_t>(y) >= zr.size()) {
      throw Error(ErrorCode::InvalidArgument, "label out of range: " + std::to_string(y));
    }
    const double zmax = *std::max_element(zr.begin(), zr.end());
    double se = 0.0;
    for (double v : zr) se += std::exp(v - zmax);
    out[r] = zmax + std::log(se) - zr[static_cast<std::size_t>(y)];
  }
  Node n{Op::SoftmaxCrossEntropy, {li}, std::move(out)};
  n.labels.assign(labels.begin(), labels.end());
  return push(std::move(n));
}

NodeId Tape::squared_error(NodeId pi, NodeId ti) {
  const Tensor& p = value(pi);
  const Tensor& t = value(ti);
  require(p.shape() == t.shape(), "squared_error " + shape_string(p.shape()) + " vs " + shape_string(t.shape()));
  Tensor out(rows_shape(p));
  for (std::size_t r = 0; r < p.rows(); ++r) {
    const auto pr = p.row(r);
    const auto tr = t.row(r);
    double s = 0.0;
    for (std::size_t c = 0; c < pr.size(); ++c) s += (pr[c] - tr[c]) * (pr[c] - tr[c]);
    out[r] = 0.5 * s;
  }
  return push({Op::SquaredError, {pi, ti}, std::move(out)});
}

void Tape::backward(NodeId scalar_output) {
  const Tensor& v = value(scalar_output);
  backward(scalar_output, Tensor::filled(v.shape(), 1.0));
}

void Tape::backward(NodeId output, const Tensor& seed) {
  if (consumed_) throw Error(ErrorCode::TapeConsumed, "backward already ran on this recording");
  const Tensor& out = value(output);
  if (seed.shape() != out.shape()) {
    throw Error(ErrorCode::ShapeMismatch,
                "seed " + shape_string(seed.shape()) + " vs output " + shape_string(out.shape()));
  }
  consumed_ = true;
  grads_.clear();
  grads_.reserve(nodes_.size());
  for (const Node& n : nodes_) grads_.push_back(Tensor::zeros_like(n.value));
  has_grad_.assign(nodes_.size(), false);
  accumulate(output, seed);
  for (std::size_t i = output + 1; i-- > 0;) {
    if (has_grad_[i]) backprop_node(i);
  }
}

const Tensor& Tape::grad(NodeId id) const {
  node(id);
  if (!consumed_) throw Error(ErrorCode::InvalidState, "grad requested before backward");
  return grads_[id];
}

void Tape::accumulate(NodeId id, const Tensor& g) {
  grads_[id] += g;
  has_grad_[id] = true;
}

void Tape::backprop_node(NodeId id) {
  const Node& n = nodes_[id];
  const Tensor& gy = grads_[id];
  switch (n.op) {
    case Op::Leaf:
      break;
    case Op::Add:
      accumulate(n.parents[0], gy);
      accumulate(n.parents[1], gy);
      break;
    case Op::Sub:
      accumulate(n.parents[0], gy);
      accumulate(n.parents[1], gy * -1.0);
      break;
    case Op::Mul: {
      const Tensor& a = nodes_[n.parents[0]].value;
      const Tensor& b = nodes_[n.parents[1]].value;
      Tensor ga = gy, gb = gy;
      for (std::size_t i = 0; i < gy.size(); ++i) {
        ga[i] *= b[i];
        gb[i] *= a[i];
      }
      accumulate(n.parents[0], ga);
      accumulate(n.parents[1], gb);
      break;
    }
    case Op::Scale:
      accumulate(n.parents[0], gy * n.scalar);
      break;
    case Op::MatMul: {
      const Tensor& a = nodes_[n.parents[0]].value;
      const Tensor& b = nodes_[n.parents[1]].value;
      accumulate(n.parents[0], nd::matmul(gy, b.transposed()));
      accumulate(n.parents[1], nd::matmul(a.transposed(), gy));
      break;
    }
    case Op::Linear: {
      const Tensor& x = nodes_[n.parents[0]].value;
      const Tensor& w = nodes_[n.parents[1]].value;
      const std::size_t batch = x.rows(), in = w.cols(), out = w.rows();
      Tensor gx = Tensor::zeros_like(x);
      Tensor gw = Tensor::zeros_like(w);
      for (std::size_t b = 0; b < batch; ++b) {
        const auto xr = x.row(b);
        const auto gr = gy.row(b);
        auto gxr = gx.row(b);
        for (std::size_t j = 0; j < out; ++j) {
          const double g = gr[j];
          if (g == 0.0) continue;
          const auto wr = w.row(j);
          auto gwr = gw.row(j);
          for (std::size_t i = 0; i < in; ++i) {
            gxr[i] += g * wr[i];
            gwr[i] += g * xr[i];
          }
        }
      }
      accumulate(n.parents[0], gx);
      accumulate(n.parents[1], gw);
      break;
    }
    case Op::AddRow: {
      const Tensor& b = nodes_[n.parents[1]].value;
      Tensor gb = Tensor::zeros_like(b);
      for (std::size_t r = 0; r < gy.rows(); ++r) {
        const auto gr = gy.row(r);
        for (std::size_t c = 0; c < gr.size(); ++c) gb[c] += gr[c];
      }
      accumulate(n.parents[0], gy);
      accumulate(n.parents[1], gb);
      break;
    }
    case Op::Relu: {
      const Tensor& x = nodes_[n.parents[0]].value;
      Tensor gx = gy;
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = x[i] > 0.0 ? gx[i] : 0.0;
      accumulate(n.parents[0], gx);
      break;
    }
    case Op::Sum:
    case Op::Mean: {
      const Tensor& x = nodes_[n.parents[0]].value;
      const double g = gy.item() * (n.op == Op::Mean ? 1.0 / static_cast<double>(x.size()) : 1.0);
      accumulate(n.parents[0], Tensor::filled(x.shape(), g));
      break;
    }
    case Op::RmsNorm:
    case Op::LayerNorm: {
      const Tensor& x = nodes_[n.parents[0]].value;
      const Tensor& gamma = nodes_[n.parents[1]].value;
      Tensor gx = Tensor::zeros_like(x);
      Tensor gg = Tensor::zeros_like(gamma);
      std::vector<double> centered(x.cols());
      for (std::size_t r = 0; r < x.rows(); ++r) {
        const auto xr = x.row(r);
        auto gxr = gx.row(r);
        if (n.op == Op::RmsNorm) {
          rms_row_backward(xr, gamma.data(), gy.row(r), n.scalar, gxr, gg.data());
        } else {
          double m = 0.0;
          for (double v : xr) m += v;
          m /= static_cast<double>(xr.size());
          for (std::size_t c = 0; c < xr.size(); ++c) centered[c] = xr[c] - m;
          rms_row_backward(centered, gamma.data(), gy.row(r), n.scalar, gxr, gg.data());
          double gm = 0.0;
          for (double v : gxr) gm += v;
          gm /= static_cast<double>(gxr.size());
          for (double& v : gxr) v -= gm;
        }
      }
      accumulate(n.parents[0], gx);
      accumulate(n.parents[1], gg);
      break;
    }
    case Op::AffineNorm: {
      const Tensor& x = nodes_[n.parents[0]].value;
      const Tensor& gamma = nodes_[n.parents[1]].value;
      const Tensor& mean = n.aux[0];
      const Tensor& var = n.aux[1];
      Tensor gx = Tensor::zeros_like(x);
      Tensor gg = Tensor::zeros_like(gamma);
      for (std::size_t r = 0; r < x.rows(); ++r) {
        const auto xr = x.row(r);
        const auto gr = gy.row(r);
        auto gxr = gx.row(r);
        for (std::size_t c = 0; c < xr.size(); ++c) {
          const double inv = 1.0 / std::sqrt(var[c] + n.scalar);
          gxr[c] = gr[c] * gamma[c] * inv;
          gg[c] += gr[c] * (xr[c] - mean[c]) * inv;
        }
      }
      accumulate(n.parents[0], gx);
      accumulate(n.parents[1], gg);
      break;
    }
    case Op::SoftmaxCrossEntropy: {
      const Tensor& z = nodes_[n.parents[0]].value;
      Tensor gz = Tensor::zeros_like(z);
      for (std::size_t r = 0; r < z.rows(); ++r) {
        const auto zr = z.row(r);
        auto gzr = gz.row(r);
        const double zmax = *std::max_element(zr.begin(), zr.end());
        double se = 0.0;
        for (double v : zr) se += std::exp(v - zmax);
        for (std::size_t c = 0; c < zr.size(); ++c) gzr[c] = gy[r] * std::exp(zr[c] - zmax) / se;
        gzr[static_cast<std::size_t>(n.labels[r])] -= gy[r];
      }
      accumulate(n.parents[0], gz);
      break;
    }
    case Op::SquaredError: {
      const Tensor& p = nodes_[n.parents[0]].value;
      const Tensor& t = nodes_[n.parents[1]].value;
      Tensor gp = Tensor::zeros_like(p);
      for (std::size_t r = 0; r < p.rows(); ++r) {
        const auto pr = p.row(r);
        const auto tr = t.row(r);
        auto gpr = gp.row(r);
        for (std::size_t c = 0; c < pr.size(); ++c) gpr[c] = gy[r] * (pr[c] - tr[c]);
      }
      accumulate(n.parents[0], gp);
      accumulate(n.parents[1], gp * -1.0);
      break;
    }
  }
}

}  // namespace resexp::nd
