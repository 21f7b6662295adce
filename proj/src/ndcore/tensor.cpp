#include "resexp/ndcore/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "resexp/error.hpp"

namespace resexp::nd {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

namespace {

void validate_shape(const Shape& shape) {
  if (shape.size() > 2) {
    throw Error(ErrorCode::ShapeMismatch, "rank > 2 not supported: " + shape_string(shape));
  }
  for (std::size_t d : shape) {
    if (d == 0) throw Error(ErrorCode::ShapeMismatch, "zero extent in " + shape_string(shape));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw Error(ErrorCode::ShapeMismatch,
                std::string(what) + ": " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
}

}  // namespace

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
  validate_shape(shape_);
  data_.assign(shape_size(shape_), 0.0);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  validate_shape(shape_);
  if (shape_size(shape_) != data_.size()) {
    throw Error(ErrorCode::ShapeMismatch,
                "data length " + std::to_string(data_.size()) + " does not match shape " + shape_string(shape_));
  }
}

Tensor Tensor::scalar(double v) { return Tensor(Shape{}, {v}); }

Tensor Tensor::vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor(Shape{n}, std::move(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
  return Tensor(Shape{rows, cols}, std::move(values));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> flat;
  flat.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw Error(ErrorCode::ShapeMismatch, "ragged matrix literal");
    flat.insert(flat.end(), row.begin(), row.end());
  }
  return matrix(r, c, std::move(flat));
}

Tensor Tensor::filled(Shape shape, double value) {
  Tensor t(std::move(shape));
  std::fill(t.data_.begin(), t.data_.end(), value);
  return t;
}

std::size_t Tensor::rows() const noexcept { return shape_.size() == 2 ? shape_[0] : 1; }

std::size_t Tensor::cols() const noexcept {
  if (shape_.size() == 2) return shape_[1];
  if (shape_.size() == 1) return shape_[0];
  return 1;
}

double Tensor::item() const {
  if (data_.size() != 1) throw Error(ErrorCode::ShapeMismatch, "item() on " + shape_string(shape_));
  return data_[0];
}

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor Tensor::transposed() const {
  if (rank() != 2) return *this;
  Tensor t(Shape{shape_[1], shape_[0]});
  for (std::size_t r = 0; r < shape_[0]; ++r)
    for (std::size_t c = 0; c < shape_[1]; ++c) t(c, r) = (*this)(r, c);
  return t;
}

double Tensor::squared_norm() const noexcept {
  double s = 0.0;
  for (double v : data_) s += v * v;
  return s;
}

double Tensor::norm() const noexcept { return std::sqrt(squared_norm()); }

Tensor& Tensor::operator+=(const Tensor& other) {
  require_same_shape(*this, other, "operator+=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Tensor& Tensor::operator-=(const Tensor& other) {
  require_same_shape(*this, other, "operator-=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
  return *this;
}

Tensor& Tensor::operator*=(double s) noexcept {
  for (double& v : data_) v *= s;
  return *this;
}

Tensor operator+(Tensor a, const Tensor& b) { return a += b; }
Tensor operator-(Tensor a, const Tensor& b) { return a -= b; }
Tensor operator*(Tensor a, double s) { return a *= s; }
Tensor operator*(double s, Tensor a) { return a *= s; }

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows()) {
    throw Error(ErrorCode::ShapeMismatch, "matmul " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  Tensor out(Shape{n, m});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a(i, p);
      if (aip == 0.0) continue;
      const auto brow = b.row(p);
      auto orow = out.row(i);
      for (std::size_t j = 0; j < m; ++j) orow[j] += aip * brow[j];
    }
  }
  return out;
}

double dot(const Tensor& a, const Tensor& b) {
  if (a.size() != b.size()) throw Error(ErrorCode::ShapeMismatch, "dot size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end) {
  if (a.rank() != 2 || begin >= end || end > a.rows()) {
    throw Error(ErrorCode::ShapeMismatch, "slice_rows out of range");
  }
  const std::size_t c = a.cols();
  std::vector<double> out(a.data().begin() + static_cast<std::ptrdiff_t>(begin * c),
                          a.data().begin() + static_cast<std::ptrdiff_t>(end * c));
  return Tensor::matrix(end - begin, c, std::move(out));
}

Tensor gather_rows(const Tensor& a, std::span<const std::size_t> rows) {
  if (a.rank() != 2 || rows.empty()) throw Error(ErrorCode::ShapeMismatch, "gather_rows needs rank-2 and rows");
  const std::size_t c = a.cols();
  std::vector<double> out;
  out.reserve(rows.size() * c);
  for (std::size_t r : rows) {
    if (r >= a.rows()) throw Error(ErrorCode::ShapeMismatch, "gather_rows index out of range");
    const auto src = a.row(r);
    out.insert(out.end(), src.begin(), src.end());
  }
  return Tensor::matrix(rows.size(), c, std::move(out));
}

Tensor row_mean(const Tensor& a) {
  Tensor out(Shape{a.cols()});
  for (std::size_t r = 0; r < a.rows(); ++r) {
    const auto src = a.row(r);
    for (std::size_t c = 0; c < a.cols(); ++c) out[c] += src[c];
  }
  out *= 1.0 / static_cast<double>(a.rows());
  return out;
}

}  // namespace resexp::nd
