#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "decompkan/error.hpp"

namespace decompkan {

/// Uniform B-spline grid on [lo, hi] with `order` extra knots on each side.
///
/// knot(i) = lo + (i - order) * h, h = (hi - lo) / grid_size, i = 0..G+2p.
/// There are G + p basis functions of degree p.
class SplineGrid {
 public:
  SplineGrid(std::size_t grid_size = 5, std::size_t order = 3, double lo = -1.0, double hi = 1.0)
      : grid_size_(grid_size), order_(order), lo_(lo), hi_(hi) {
    if (grid_size == 0) throw ConfigError("SplineGrid: grid_size must be >= 1");
    if (!(lo < hi)) throw ConfigError("SplineGrid: require lo < hi");
    h_ = (hi - lo) / static_cast<double>(grid_size);
    knots_.resize(grid_size + 2 * order + 1);
    for (std::size_t i = 0; i < knots_.size(); ++i) {
      knots_[i] = lo + (static_cast<double>(i) - static_cast<double>(order)) * h_;
    }
  }

  std::size_t grid_size() const noexcept { return grid_size_; }
  std::size_t order() const noexcept { return order_; }
  double lo() const noexcept { return lo_; }
  double hi() const noexcept { return hi_; }
  double spacing() const noexcept { return h_; }
  std::span<const double> knots() const noexcept { return knots_; }
  std::size_t num_basis() const noexcept { return grid_size_ + order_; }
  /// Working-buffer length needed by the evaluation routines.
  std::size_t work_size() const noexcept { return grid_size_ + 2 * order_; }

  /// Cox-de Boor recursion. `work` must hold work_size() doubles; on return
  /// its first num_basis() entries are B_i^p(x). Outside the outermost knots
  /// every basis vanishes; between lo and the first knot (and symmetrically
  /// at the top) the boundary pieces are evaluated as-is, without clamping x.
  void eval(double x, std::span<double> work) const noexcept { eval_to_order(x, order_, work); }

  /// Basis values and first derivatives. `work` needs work_size() entries,
  /// `basis` and `deriv` need num_basis().
  void eval_with_deriv(double x, std::span<double> work, std::span<double> basis,
                       std::span<double> deriv) const noexcept {
    const std::size_t nb = num_basis();
    if (order_ == 0) {
      eval_to_order(x, 0, work);
      for (std::size_t i = 0; i < nb; ++i) {
        basis[i] = work[i];
        deriv[i] = 0.0;
      }
      return;
    }
    eval_to_order(x, order_ - 1, work);
    // dB_i^p/dx = p * (B_i^{p-1}/(t_{i+p}-t_i) - B_{i+1}^{p-1}/(t_{i+p+1}-t_{i+1}))
    // With uniform knots both denominators are p*h.
    const double inv_h = 1.0 / h_;
    for (std::size_t i = 0; i < nb; ++i) deriv[i] = (work[i] - work[i + 1]) * inv_h;
    raise_order(x, order_, work);
    for (std::size_t i = 0; i < nb; ++i) basis[i] = work[i];
  }

 private:
  void eval_to_order(double x, std::size_t order, std::span<double> work) const noexcept {
    const std::size_t intervals = knots_.size() - 1;
    for (std::size_t i = 0; i < intervals; ++i) {
      work[i] = (knots_[i] <= x && x < knots_[i + 1]) ? 1.0 : 0.0;
    }
    for (std::size_t k = 1; k <= order; ++k) raise_order(x, k, work);
  }

  // Updates work from degree k-1 to degree k in place (ascending i reads the
  // not-yet-updated work[i+1]).
  void raise_order(double x, std::size_t k, std::span<double> work) const noexcept {
    const std::size_t count = knots_.size() - 1 - k;
    for (std::size_t i = 0; i < count; ++i) {
      const double left = (x - knots_[i]) / (knots_[i + k] - knots_[i]);
      const double right = (knots_[i + k + 1] - x) / (knots_[i + k + 1] - knots_[i + 1]);
      work[i] = left * work[i] + right * work[i + 1];
    }
  }

  std::size_t grid_size_;
  std::size_t order_;
  double lo_;
  double hi_;
  double h_ = 0.0;
  std::vector<double> knots_;
};

inline std::vector<double> bspline_basis(double x, const SplineGrid& grid) {
  std::vector<double> work(grid.work_size());
  grid.eval(x, work);
  work.resize(grid.num_basis());
  return work;
}

inline std::vector<double> bspline_basis_deriv(double x, const SplineGrid& grid) {
  std::vector<double> work(grid.work_size()), basis(grid.num_basis()), deriv(grid.num_basis());
  grid.eval_with_deriv(x, work, basis, deriv);
  return deriv;
}

}  // namespace decompkan
