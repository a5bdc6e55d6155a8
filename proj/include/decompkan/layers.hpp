#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "decompkan/error.hpp"
#include "decompkan/rng.hpp"
#include "decompkan/spline.hpp"
#include "decompkan/tensor.hpp"

namespace decompkan {

// ---- dense -----------------------------------------------------------------

/// Affine map y = W x + b applied row-wise: input (batch×in) -> (batch×out).
struct DenseParams {
  Tensor2 weight;  // out × in
  Tensor2 bias;    // 1 × out

  DenseParams() = default;
  DenseParams(std::size_t in_dim, std::size_t out_dim) : weight(out_dim, in_dim), bias(1, out_dim) {}

  std::size_t in_dim() const noexcept { return weight.cols(); }
  std::size_t out_dim() const noexcept { return weight.rows(); }
  std::size_t param_count() const noexcept { return weight.size() + bias.size(); }

  template <class F>
  void for_each(const std::string& prefix, F&& f) {
    f(prefix + ".weight", weight);
    f(prefix + ".bias", bias);
  }
  template <class F>
  void for_each(const std::string& prefix, F&& f) const {
    f(prefix + ".weight", weight);
    f(prefix + ".bias", bias);
  }
};

/// Uniform(±1/√in) for both blocks.
inline DenseParams init_dense(Rng& rng, std::size_t in_dim, std::size_t out_dim) {
  if (in_dim == 0 || out_dim == 0) throw ConfigError("init_dense: dims must be >= 1");
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_dim));
  DenseParams p;
  p.weight = rand_uniform(rng, -bound, bound, out_dim, in_dim);
  p.bias = rand_uniform(rng, -bound, bound, 1, out_dim);
  return p;
}

inline Tensor2 dense_forward(const Tensor2& input, const DenseParams& p) {
  if (input.cols() != p.in_dim()) {
    throw ShapeError("dense_forward: input " + input.shape_str() + " but layer expects " +
                     std::to_string(p.in_dim()) + " features");
  }
  Tensor2 out = matmul_bt(input, p.weight);
  const std::size_t n = out.cols();
  for (std::size_t r = 0; r < out.rows(); ++r) {
    double* o = out.data() + r * n;
    for (std::size_t j = 0; j < n; ++j) o[j] += p.bias[j];
  }
  return out;
}

/// Accumulates dW, db into `grads` and returns dL/dinput.
inline Tensor2 dense_backward(const Tensor2& input, const DenseParams& p, const Tensor2& upstream,
                              DenseParams& grads) {
  if (upstream.rows() != input.rows() || upstream.cols() != p.out_dim() ||
      input.cols() != p.in_dim()) {
    throw ShapeError("dense_backward: upstream " + upstream.shape_str() + ", input " +
                     input.shape_str() + ", layer " + p.weight.shape_str());
  }
  matmul_at_acc(upstream, input, grads.weight);
  for (std::size_t r = 0; r < upstream.rows(); ++r) {
    for (std::size_t j = 0; j < upstream.cols(); ++j) grads.bias[j] += upstream(r, j);
  }
  return matmul(upstream, p.weight);
}

// ---- KAN -------------------------------------------------------------------

/// One KAN layer. Edge i→j computes
///   φ(x) = base_weight[j,i]·SiLU(x) + spline_scaler[j,i]·Σ_k spline_coef[j,i,k]·B_k(x)
/// spline_coef is stored as (out·in)×(G+p), row j·in + i.
struct KanLayerParams {
  SplineGrid grid;
  Tensor2 base_weight;    // out × in
  Tensor2 spline_coef;    // (out·in) × num_basis
  Tensor2 spline_scaler;  // out × in

  KanLayerParams() = default;
  KanLayerParams(std::size_t in_dim, std::size_t out_dim, SplineGrid g)
      : grid(std::move(g)),
        base_weight(out_dim, in_dim),
        spline_coef(out_dim * in_dim, grid.num_basis()),
        spline_scaler(out_dim, in_dim) {}

  std::size_t in_dim() const noexcept { return base_weight.cols(); }
  std::size_t out_dim() const noexcept { return base_weight.rows(); }
  std::size_t param_count() const noexcept {
    return base_weight.size() + spline_coef.size() + spline_scaler.size();
  }
  const double* coef(std::size_t j, std::size_t i) const noexcept {
    return spline_coef.data() + (j * in_dim() + i) * grid.num_basis();
  }
  double* coef(std::size_t j, std::size_t i) noexcept {
    return spline_coef.data() + (j * in_dim() + i) * grid.num_basis();
  }

  /// Scalar edge function, evaluated from this edge's parameters only.
  double edge(std::size_t i, std::size_t j, double x) const {
    std::vector<double> work(grid.work_size());
    grid.eval(x, work);
    const double* c = coef(j, i);
    double s = 0.0;
    for (std::size_t k = 0; k < grid.num_basis(); ++k) s += c[k] * work[k];
    return base_weight(j, i) * silu(x) + spline_scaler(j, i) * s;
  }

  template <class F>
  void for_each(const std::string& prefix, F&& f) {
    f(prefix + ".base_weight", base_weight);
    f(prefix + ".spline_coef", spline_coef);
    f(prefix + ".spline_scaler", spline_scaler);
  }
  template <class F>
  void for_each(const std::string& prefix, F&& f) const {
    f(prefix + ".base_weight", base_weight);
    f(prefix + ".spline_coef", spline_coef);
    f(prefix + ".spline_scaler", spline_scaler);
  }
};

/// base_weight ~ U(±√(6/in)), spline_coef ~ N(0, 0.1/√(G+p)), spline_scaler = 1.
inline KanLayerParams init_kan_layer(Rng& rng, std::size_t in_dim, std::size_t out_dim,
                                     const SplineGrid& grid) {
  if (in_dim == 0 || out_dim == 0) throw ConfigError("init_kan_layer: dims must be >= 1");
  KanLayerParams p(in_dim, out_dim, grid);
  const double wb = std::sqrt(6.0 / static_cast<double>(in_dim));
  p.base_weight = rand_uniform(rng, -wb, wb, out_dim, in_dim);
  const double cs = 0.1 / std::sqrt(static_cast<double>(grid.num_basis()));
  p.spline_coef = rand_normal(rng, 0.0, cs, out_dim * in_dim, grid.num_basis());
  p.spline_scaler.fill(1.0);
  return p;
}

/// Per-(row, input) quantities retained by kan_forward for the backward pass.
/// Only the p+1 basis entries that can be nonzero are kept, starting at
/// `start` (which may be negative near the bottom of the knot vector).
struct KanCache {
  const KanLayerParams* layer = nullptr;
  Tensor2 input;
  std::vector<double> silu_val;
  std::vector<double> silu_grad;
  std::vector<int> start;
  std::vector<double> basis;  // rows·in·(p+1)
  std::vector<double> deriv;  // rows·in·(p+1)
  std::size_t width = 0;      // p+1
};

namespace detail {

inline constexpr int kNoSupport = -1000000;

// Basis window for x: start index and p+1 values (basis and derivative).
inline void local_basis(const SplineGrid& g, double x, std::span<double> work,
                        std::span<double> full_b, std::span<double> full_d, int& start,
                        double* b, double* d) {
  const std::size_t width = g.order() + 1;
  const auto knots = g.knots();
  const std::size_t intervals = knots.size() - 1;
  int m = -1;
  if (x >= knots.front() && x < knots.back()) {
    double f = std::floor((x - knots.front()) / g.spacing());
    std::size_t mi = f < 0 ? 0 : static_cast<std::size_t>(f);
    if (mi >= intervals) mi = intervals - 1;
    while (mi > 0 && x < knots[mi]) --mi;
    while (mi + 1 < intervals && x >= knots[mi + 1]) ++mi;
    m = static_cast<int>(mi);
  }
  if (m < 0) {
    start = kNoSupport;
    for (std::size_t k = 0; k < width; ++k) b[k] = d[k] = 0.0;
    return;
  }
  g.eval_with_deriv(x, work, full_b, full_d);
  start = m - static_cast<int>(g.order());
  const int nb = static_cast<int>(g.num_basis());
  for (std::size_t k = 0; k < width; ++k) {
    const int idx = start + static_cast<int>(k);
    const bool in = idx >= 0 && idx < nb;
    b[k] = in ? full_b[static_cast<std::size_t>(idx)] : 0.0;
    d[k] = in ? full_d[static_cast<std::size_t>(idx)] : 0.0;
  }
}

// Σ_k c[start+k]·v[k] over in-range k.
inline double window_dot(const double* c, int start, const double* v, std::size_t width, int nb) {
  double s = 0.0;
  for (std::size_t k = 0; k < width; ++k) {
    const int idx = start + static_cast<int>(k);
    if (idx >= 0 && idx < nb) s += c[idx] * v[k];
  }
  return s;
}

}  // namespace detail

inline Tensor2 kan_forward(const Tensor2& input, const KanLayerParams& p, KanCache* cache = nullptr) {
  const std::size_t in = p.in_dim(), out = p.out_dim(), rows = input.rows();
  if (input.cols() != in) {
    throw ShapeError("kan_forward: input " + input.shape_str() + " but layer expects " +
                     std::to_string(in) + " features");
  }
  const SplineGrid& g = p.grid;
  const std::size_t width = g.order() + 1;
  const int nb = static_cast<int>(g.num_basis());

  KanCache local;
  KanCache& c = cache ? *cache : local;
  c.layer = &p;
  c.input = input;
  c.width = width;
  c.silu_val.resize(rows * in);
  c.silu_grad.resize(rows * in);
  c.start.resize(rows * in);
  c.basis.resize(rows * in * width);
  c.deriv.resize(rows * in * width);

  std::vector<double> work(g.work_size()), fb(g.num_basis()), fd(g.num_basis());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t i = 0; i < in; ++i) {
      const std::size_t ri = r * in + i;
      const double x = input(r, i);
      c.silu_val[ri] = silu(x);
      c.silu_grad[ri] = silu_deriv(x);
      detail::local_basis(g, x, work, fb, fd, c.start[ri], &c.basis[ri * width],
                          &c.deriv[ri * width]);
    }
  }

  Tensor2 output(rows, out);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* sv = &c.silu_val[r * in];
    const int* st = &c.start[r * in];
    const double* bs = &c.basis[r * in * width];
    for (std::size_t j = 0; j < out; ++j) {
      const double* wb = p.base_weight.data() + j * in;
      const double* sc = p.spline_scaler.data() + j * in;
      const double* coef = p.coef(j, 0);
      double acc = 0.0;
      for (std::size_t i = 0; i < in; ++i) {
        double s = 0.0;
        if (st[i] != detail::kNoSupport) {
          s = detail::window_dot(coef + i * nb, st[i], bs + i * width, width, nb);
        }
        acc += wb[i] * sv[i] + sc[i] * s;
      }
      output(r, j) = acc;
    }
  }
  return output;
}

/// Accumulates parameter gradients into `grads` and returns dL/dinput.
inline Tensor2 kan_backward(const KanCache& c, const KanLayerParams& p, const Tensor2& upstream,
                            KanLayerParams& grads) {
  const std::size_t in = p.in_dim(), out = p.out_dim();
  if (c.layer != &p || c.input.cols() != in || c.width != p.grid.order() + 1) {
    throw InternalError("kan_backward: cache does not belong to this layer");
  }
  const std::size_t rows = c.input.rows();
  if (upstream.rows() != rows || upstream.cols() != out) {
    throw ShapeError("kan_backward: upstream " + upstream.shape_str() + ", expected " +
                     std::to_string(rows) + "x" + std::to_string(out));
  }
  if (!grads.base_weight.same_shape(p.base_weight) || !grads.spline_coef.same_shape(p.spline_coef)) {
    throw ShapeError("kan_backward: gradient buffers do not mirror the layer");
  }
  const std::size_t width = c.width;
  const int nb = static_cast<int>(p.grid.num_basis());

  Tensor2 dinput(rows, in);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* sv = &c.silu_val[r * in];
    const double* sg = &c.silu_grad[r * in];
    const int* st = &c.start[r * in];
    const double* bs = &c.basis[r * in * width];
    const double* ds = &c.deriv[r * in * width];
    double* dx = dinput.data() + r * in;
    for (std::size_t j = 0; j < out; ++j) {
      const double gj = upstream(r, j);
      if (gj == 0.0) continue;
      const double* wb = p.base_weight.data() + j * in;
      const double* sc = p.spline_scaler.data() + j * in;
      const double* coef = p.coef(j, 0);
      double* gwb = grads.base_weight.data() + j * in;
      double* gsc = grads.spline_scaler.data() + j * in;
      double* gcoef = grads.coef(j, 0);
      for (std::size_t i = 0; i < in; ++i) {
        gwb[i] += gj * sv[i];
        double dxi = wb[i] * sg[i];
        if (st[i] != detail::kNoSupport) {
          const double* ci = coef + i * nb;
          double* gci = gcoef + i * nb;
          const double* bi = bs + i * width;
          const double* di = ds + i * width;
          double s = 0.0, sd = 0.0;
          const double gs = gj * sc[i];
          for (std::size_t k = 0; k < width; ++k) {
            const int idx = st[i] + static_cast<int>(k);
            if (idx < 0 || idx >= nb) continue;
            s += ci[idx] * bi[k];
            sd += ci[idx] * di[k];
            gci[idx] += gs * bi[k];
          }
          gsc[i] += gj * s;
          dxi += sc[i] * sd;
        }
        dx[i] += gj * dxi;
      }
    }
  }
  return dinput;
}

}  // namespace decompkan
