#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstring>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "lorafed/error.hpp"

namespace lorafed {

using Dims = std::vector<std::size_t>;

inline std::size_t numel(const Dims& dims) {
  return std::accumulate(dims.begin(), dims.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string dims_to_string(const Dims& dims) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) os << 'x';
    os << dims[i];
  }
  os << ']';
  return os.str();
}

/// Named dense row-major tensor of doubles.
///
/// A default-constructed tensor is the null tensor (no dims, no data); it is
/// used to mark an absent optional parameter. Every other tensor satisfies
/// product(dims) == data.size() with all dims positive.
class Tensor {
 public:
  Tensor() = default;

  Tensor(std::string name, Dims dims)
      : name_(std::move(name)), dims_(std::move(dims)) {
    validate_dims();
    data_.assign(numel(dims_), 0.0);
  }

  Tensor(std::string name, Dims dims, std::vector<double> data)
      : name_(std::move(name)), dims_(std::move(dims)), data_(std::move(data)) {
    validate_dims();
    if (numel(dims_) != data_.size()) {
      fail(ErrorCode::kShape, "tensor '" + name_ + "': dims " +
                                  dims_to_string(dims_) + " do not match " +
                                  std::to_string(data_.size()) + " elements");
    }
  }

  static Tensor zeros(std::string name, Dims dims) {
    return Tensor(std::move(name), std::move(dims));
  }

  static Tensor filled(std::string name, Dims dims, double value) {
    Tensor t(std::move(name), std::move(dims));
    std::fill(t.data_.begin(), t.data_.end(), value);
    return t;
  }

  static Tensor identity(std::string name, std::size_t n) {
    Tensor t(std::move(name), {n, n});
    for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
    return t;
  }

  static Tensor matrix(std::string name,
                       std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t m = rows.size();
    const std::size_t n = m ? rows.begin()->size() : 0;
    std::vector<double> data;
    data.reserve(m * n);
    for (const auto& row : rows) {
      if (row.size() != n) fail(ErrorCode::kShape, "ragged matrix literal");
      data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor(std::move(name), {m, n}, std::move(data));
  }

  static Tensor vector(std::string name, std::vector<double> values) {
    const std::size_t n = values.size();
    return Tensor(std::move(name), {n}, std::move(values));
  }

  const std::string& name() const noexcept { return name_; }
  void set_name(std::string name) { name_ = std::move(name); }
  const Dims& dims() const noexcept { return dims_; }
  std::size_t ndim() const noexcept { return dims_.size(); }
  std::size_t dim(std::size_t i) const { return dims_.at(i); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return dims_.empty(); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::vector<double>& values() noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * dims_[1] + c]; }
  double operator()(std::size_t r, std::size_t c) const {
    return data_[r * dims_[1] + c];
  }

  std::size_t rows() const { return dims_.at(0); }
  std::size_t cols() const { return dims_.size() == 1 ? 1 : dims_.at(1); }

  std::span<double> row(std::size_t r) {
    return std::span<double>(data_).subspan(r * dims_[1], dims_[1]);
  }
  std::span<const double> row(std::size_t r) const {
    return std::span<const double>(data_).subspan(r * dims_[1], dims_[1]);
  }

  bool same_shape(const Tensor& other) const { return dims_ == other.dims_; }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  // Bitwise comparison of the payload, so -0.0 and 0.0 are distinct.
  bool bitwise_equal(const Tensor& other) const {
    if (dims_ != other.dims_) return false;
    return std::memcmp(data_.data(), other.data_.data(),
                       data_.size() * sizeof(double)) == 0;
  }

 private:
  void validate_dims() const {
    for (std::size_t d : dims_) {
      if (d == 0) {
        fail(ErrorCode::kShape, "tensor '" + name_ + "' has a zero dimension " +
                                    dims_to_string(dims_));
      }
    }
  }

  std::string name_;
  Dims dims_;
  std::vector<double> data_;
};

inline void require_finite(const Tensor& t, std::string_view context) {
  if (!t.all_finite()) {
    fail(ErrorCode::kNumeric, std::string(context) + ": tensor '" + t.name() +
                                  "' contains a non-finite value");
  }
}

inline std::string describe(const Tensor& t) {
  return "'" + t.name() + "' " + dims_to_string(t.dims());
}

inline void require_matrix(const Tensor& t, std::string_view op) {
  if (t.ndim() != 2) {
    fail(ErrorCode::kShape, std::string(op) + ": expected a matrix, got " + describe(t));
  }
}

inline void require_same_shape(const Tensor& a, const Tensor& b, std::string_view op) {
  if (!a.same_shape(b)) {
    fail(ErrorCode::kShape, std::string(op) + ": shape mismatch between " +
                                describe(a) + " and " + describe(b));
  }
}

namespace detail {

using RowMajorMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatrixMap = Eigen::Map<const RowMajorMatrix>;
using MatrixMap = Eigen::Map<RowMajorMatrix>;

// c(m x n) += a(m x k) * b(k x n)
inline void gemm_nn_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  const auto [mi, ki, ni] = std::tuple{Eigen::Index(m), Eigen::Index(k), Eigen::Index(n)};
  MatrixMap(c, mi, ni).noalias() += ConstMatrixMap(a, mi, ki) * ConstMatrixMap(b, ki, ni);
}

// c(m x n) += a(k x m)^T * b(k x n)
inline void gemm_tn_acc(const double* a, const double* b, double* c, std::size_t k, std::size_t m, std::size_t n) {
  const auto [mi, ki, ni] = std::tuple{Eigen::Index(m), Eigen::Index(k), Eigen::Index(n)};
  MatrixMap(c, mi, ni).noalias() += ConstMatrixMap(a, ki, mi).transpose() * ConstMatrixMap(b, ki, ni);
}

}  // namespace detail

inline Tensor transpose(const Tensor& a) {
  require_matrix(a, "transpose");
  const std::size_t m = a.rows(), n = a.cols();
  Tensor out(a.name() + "^T", {n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out(j, i) = a(i, j);
  return out;
}

/// Standard matrix product a(m x k) * b(k x n).
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  if (a.cols() != b.rows()) {
    fail(ErrorCode::kShape, "matmul: inner dimensions disagree between " +
                                describe(a) + " and " + describe(b));
  }
  Tensor out(a.name() + "*" + b.name(), {a.rows(), b.cols()});
  detail::gemm_nn_acc(a.data().data(), b.data().data(), out.data().data(), a.rows(),
                      a.cols(), b.cols());
  return out;
}

/// a(k x m)^T * b(k x n)
inline Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul_tn");
  require_matrix(b, "matmul_tn");
  if (a.rows() != b.rows()) {
    fail(ErrorCode::kShape, "matmul_tn: leading dimensions disagree between " +
                                describe(a) + " and " + describe(b));
  }
  Tensor out(a.name() + "^T*" + b.name(), {a.cols(), b.cols()});
  detail::gemm_tn_acc(a.data().data(), b.data().data(), out.data().data(), a.rows(),
                      a.cols(), b.cols());
  return out;
}

/// a(m x k) * b(n x k)^T
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul_nt");
  require_matrix(b, "matmul_nt");
  if (a.cols() != b.cols()) {
    fail(ErrorCode::kShape, "matmul_nt: trailing dimensions disagree between " +
                                describe(a) + " and " + describe(b));
  }
  return matmul(a, transpose(b));
}

/// Matrix-vector product a(m x k) * x(k).
inline Tensor matvec(const Tensor& a, const Tensor& x) {
  require_matrix(a, "matvec");
  if (x.ndim() != 1 || x.size() != a.cols()) {
    fail(ErrorCode::kShape, "matvec: " + describe(a) + " cannot multiply " + describe(x));
  }
  Tensor out(a.name() + "*" + x.name(), {a.rows()});
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < a.cols(); ++j) acc += a(i, j) * x[j];
    out[i] = acc;
  }
  return out;
}

/// Returns alpha * x + y.
inline Tensor axpy(double alpha, const Tensor& x, const Tensor& y) {
  require_same_shape(x, y, "axpy");
  Tensor out = y;
  auto o = out.data();
  auto xs = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += alpha * xs[i];
  require_finite(out, "axpy");
  return out;
}

inline Tensor scale(double alpha, const Tensor& x) {
  Tensor out = x;
  for (double& v : out.data()) v *= alpha;
  require_finite(out, "scale");
  return out;
}

inline double dot(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "dot");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

inline double norm2(const Tensor& a) { return std::sqrt(dot(a, a)); }

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace lorafed
