#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "uqkit/error.hpp"

namespace uqkit {

using Shape = std::vector<std::size_t>;

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

/// Dense row-major array of doubles.
///
/// Every dimension is positive and the value count equals the product of the
/// shape. Rank-2 tensors are the common case; rows()/cols() treat a rank-1
/// tensor of length n as a column [n x 1].
class Tensor {
 public:
  Tensor() : shape_{1}, values_(1, 0.0) {}

  Tensor(Shape shape, std::vector<double> values)
      : shape_(std::move(shape)), values_(std::move(values)) {
    if (shape_.empty()) throw DimensionError("tensor shape must have at least one dimension");
    for (std::size_t d : shape_) {
      if (d == 0) throw DimensionError("tensor dimension must be positive, got " + shape_string(shape_));
    }
    if (shape_size(shape_) != values_.size()) {
      throw DimensionError("tensor shape " + shape_string(shape_) + " does not match " +
                           std::to_string(values_.size()) + " values");
    }
  }

  static Tensor filled(Shape shape, double v) {
    const std::size_t n = shape_size(shape);
    return Tensor(std::move(shape), std::vector<double>(n, v));
  }
  static Tensor zeros(Shape shape) { return filled(std::move(shape), 0.0); }
  static Tensor scalar(double v) { return Tensor({1}, {v}); }
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
    return Tensor({rows, cols}, std::move(values));
  }
  static Tensor column(std::vector<double> values) {
    const std::size_t n = values.size();
    return Tensor({n, 1}, std::move(values));
  }
  static Tensor identity(std::size_t n) {
    Tensor t = zeros({n, n});
    for (std::size_t i = 0; i < n; ++i) t.values_[i * n + i] = 1.0;
    return t;
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return values_.size(); }
  std::size_t rows() const { return shape_[0]; }
  std::size_t cols() const { return shape_.size() > 1 ? size() / shape_[0] : 1; }
  bool is_scalar() const { return values_.size() == 1; }

  std::span<const double> values() const { return values_; }
  std::span<double> data() { return values_; }
  const std::vector<double>& vector() const { return values_; }

  double operator[](std::size_t i) const { return values_[i]; }
  double& operator[](std::size_t i) { return values_[i]; }
  double at(std::size_t r, std::size_t c) const { return values_[r * cols() + c]; }
  double& at(std::size_t r, std::size_t c) { return values_[r * cols() + c]; }
  double item() const {
    if (!is_scalar()) throw ContractError("item() on non-scalar tensor " + shape_string(shape_));
    return values_[0];
  }

  bool all_finite() const {
    return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.values_ == b.values_;
  }

 private:
  Shape shape_;
  std::vector<double> values_;
};

inline void require_matrix(const Tensor& t, const char* what) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(what) + " expects a rank-2 tensor, got " + shape_string(t.shape()));
  }
}

namespace kernels {

// C[m x n] (+)= A[m x k] * B[k x n]
inline void gemm_nn(const double* a, const double* b, double* c, std::size_t m,
                    std::size_t k, std::size_t n, bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    const double* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m x n] (+)= A[m x k] * B^T, with B stored [n x k]
inline void gemm_nt(const double* a, const double* b, double* c, std::size_t m,
                    std::size_t k, std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = b + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
      c[i * n + j] = accumulate ? c[i * n + j] + s : s;
    }
  }
}

// C[k x n] (+)= A^T * B, with A stored [m x k] and B stored [m x n]
inline void gemm_tn(const double* a, const double* b, double* c, std::size_t m,
                    std::size_t k, std::size_t n, bool accumulate) {
  if (!accumulate) std::fill(c, c + k * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    const double* brow = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      double* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace kernels

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul inner dimensions differ: " + shape_string(a.shape()) + " * " +
                         shape_string(b.shape()));
  }
  Tensor c = Tensor::zeros({a.rows(), b.cols()});
  kernels::gemm_nn(a.values().data(), b.values().data(), c.data().data(), a.rows(), a.cols(),
                   b.cols(), false);
  return c;
}

inline Tensor transpose(const Tensor& a) {
  require_matrix(a, "transpose");
  Tensor t = Tensor::zeros({a.cols(), a.rows()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t.at(j, i) = a.at(i, j);
  return t;
}

// Applies f element-wise. Shapes must match, or one side must hold a single
// value which is broadcast.
template <typename F>
Tensor zip_with(const Tensor& a, const Tensor& b, F f) {
  if (a.shape() == b.shape()) {
    Tensor out = a;
    auto o = out.data();
    auto bv = b.values();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = f(o[i], bv[i]);
    return out;
  }
  if (b.is_scalar()) {
    Tensor out = a;
    const double s = b[0];
    for (double& v : out.data()) v = f(v, s);
    return out;
  }
  if (a.is_scalar()) {
    Tensor out = b;
    const double s = a[0];
    for (double& v : out.data()) v = f(s, v);
    return out;
  }
  throw DimensionError("incompatible shapes " + shape_string(a.shape()) + " and " +
                       shape_string(b.shape()) + " (only same-shape or scalar broadcasting)");
}

template <typename F>
Tensor map(const Tensor& a, F f) {
  Tensor out = a;
  for (double& v : out.data()) v = f(v);
  return out;
}

inline Tensor operator+(const Tensor& a, const Tensor& b) { return zip_with(a, b, std::plus<>()); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return zip_with(a, b, std::minus<>()); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return zip_with(a, b, std::multiplies<>()); }

// Column slice [begin, end) of a rank-2 tensor.
inline Tensor columns(const Tensor& a, std::size_t begin, std::size_t end) {
  require_matrix(a, "columns");
  if (begin >= end || end > a.cols()) throw DimensionError("column range out of bounds");
  Tensor out = Tensor::zeros({a.rows(), end - begin});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = begin; j < end; ++j) out.at(i, j - begin) = a.at(i, j);
  return out;
}

inline Tensor select_rows(const Tensor& a, std::span<const std::size_t> rows) {
  if (rows.empty()) throw DimensionError("select_rows needs at least one row");
  const std::size_t c = a.cols();
  std::vector<double> v;
  v.reserve(rows.size() * c);
  for (std::size_t r : rows) {
    if (r >= a.rows()) throw DimensionError("row index out of range");
    auto src = a.values().subspan(r * c, c);
    v.insert(v.end(), src.begin(), src.end());
  }
  return Tensor({rows.size(), c}, std::move(v));
}

}  // namespace uqkit
