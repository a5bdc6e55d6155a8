#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "decompkan/error.hpp"

namespace decompkan {

/// Dense row-major 2-D array of doubles. The value carrier for every stage.
class Tensor2 {
 public:
  Tensor2() = default;
  Tensor2(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Tensor2(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw ShapeError("Tensor2: data length " + std::to_string(data_.size()) +
                       " != " + std::to_string(rows_) + "x" + std::to_string(cols_));
    }
  }
  Tensor2(std::initializer_list<std::initializer_list<double>> nested) {
    rows_ = nested.size();
    cols_ = rows_ ? nested.begin()->size() : 0;
    data_.reserve(rows_ * cols_);
    for (const auto& row : nested) {
      if (row.size() != cols_) throw ShapeError("Tensor2: ragged initializer");
      data_.insert(data_.end(), row.begin(), row.end());
    }
  }

  static Tensor2 zeros_like(const Tensor2& t) { return Tensor2(t.rows_, t.cols_); }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }
  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }

  std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols_, cols_};
  }
  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }
  bool same_shape(const Tensor2& o) const noexcept { return rows_ == o.rows_ && cols_ == o.cols_; }

  /// Reinterprets the row-major buffer with a new shape of equal size.
  Tensor2 reshaped(std::size_t rows, std::size_t cols) const& {
    Tensor2 out = *this;
    return std::move(out).reshaped(rows, cols);
  }
  Tensor2 reshaped(std::size_t rows, std::size_t cols) && {
    if (rows * cols != data_.size()) throw ShapeError("reshape: element count changes");
    rows_ = rows;
    cols_ = cols;
    return std::move(*this);
  }

  std::string shape_str() const { return std::to_string(rows_) + "x" + std::to_string(cols_); }

  friend bool operator==(const Tensor2& a, const Tensor2& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline void require_same_shape(const Tensor2& a, const Tensor2& b, const char* what) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(what) + ": shape mismatch " + a.shape_str() + " vs " +
                     b.shape_str());
  }
}

/// Standard matrix product a(m×k) · b(k×n).
inline Tensor2 matmul(const Tensor2& a, const Tensor2& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: lhs " + a.shape_str() + " incompatible with rhs " + b.shape_str());
  }
  Tensor2 out(a.rows(), b.cols());
  const std::size_t n = b.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double* o = out.data() + i * n;
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      const double* brow = b.data() + k * n;
      for (std::size_t j = 0; j < n; ++j) o[j] += aik * brow[j];
    }
  }
  return out;
}

/// a · bᵀ without materializing the transpose.
inline Tensor2 matmul_bt(const Tensor2& a, const Tensor2& b) {
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul_bt: lhs " + a.shape_str() + " incompatible with rhs " +
                     b.shape_str());
  }
  Tensor2 out(a.rows(), b.rows());
  const std::size_t k = a.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double* arow = a.data() + i * k;
    for (std::size_t j = 0; j < b.rows(); ++j) {
      const double* brow = b.data() + j * k;
      double acc = 0.0;
      for (std::size_t t = 0; t < k; ++t) acc += arow[t] * brow[t];
      out(i, j) = acc;
    }
  }
  return out;
}

/// aᵀ · b, accumulated into `out` (which must be a.cols × b.cols).
inline void matmul_at_acc(const Tensor2& a, const Tensor2& b, Tensor2& out) {
  if (a.rows() != b.rows() || out.rows() != a.cols() || out.cols() != b.cols()) {
    throw ShapeError("matmul_at: " + a.shape_str() + "ᵀ · " + b.shape_str() + " into " +
                     out.shape_str());
  }
  const std::size_t n = b.cols();
  for (std::size_t r = 0; r < a.rows(); ++r) {
    const double* brow = b.data() + r * n;
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double ari = a(r, i);
      if (ari == 0.0) continue;
      double* o = out.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) o[j] += ari * brow[j];
    }
  }
}

inline Tensor2 transpose(const Tensor2& a) {
  Tensor2 out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  return out;
}

inline void add_inplace(Tensor2& dst, const Tensor2& src) {
  require_same_shape(dst, src, "add");
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

inline Tensor2 add(Tensor2 a, const Tensor2& b) {
  add_inplace(a, b);
  return a;
}

inline Tensor2 sub(Tensor2 a, const Tensor2& b) {
  require_same_shape(a, b, "sub");
  for (std::size_t i = 0; i < a.size(); ++i) a[i] -= b[i];
  return a;
}

inline bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}
inline bool all_finite(const Tensor2& t) { return all_finite(t.values()); }

inline double sum_squares(const Tensor2& t) {
  double s = 0.0;
  for (double v : t.values()) s += v * v;
  return s;
}

// ---- activations -----------------------------------------------------------

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double silu(double x) { return x * sigmoid(x); }

inline double silu_deriv(double x) {
  const double s = sigmoid(x);
  return s * (1.0 + x * (1.0 - s));
}

// tanh approximation: 0.5·x·(1 + tanh(√(2/π)·(x + 0.044715·x³)))
inline constexpr double kGeluScale = 0.7978845608028654;  // √(2/π)
inline constexpr double kGeluCubic = 0.044715;

inline double gelu(double x) {
  return 0.5 * x * (1.0 + std::tanh(kGeluScale * (x + kGeluCubic * x * x * x)));
}

inline double gelu_deriv(double x) {
  const double u = kGeluScale * (x + kGeluCubic * x * x * x);
  const double t = std::tanh(u);
  const double du = kGeluScale * (1.0 + 3.0 * kGeluCubic * x * x);
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
}

template <class F>
Tensor2 map(const Tensor2& t, F&& f) {
  Tensor2 out = Tensor2::zeros_like(t);
  for (std::size_t i = 0; i < t.size(); ++i) out[i] = f(t[i]);
  return out;
}

inline Tensor2 silu(const Tensor2& t) { return map(t, [](double x) { return silu(x); }); }
inline Tensor2 gelu(const Tensor2& t) { return map(t, [](double x) { return gelu(x); }); }

}  // namespace decompkan
