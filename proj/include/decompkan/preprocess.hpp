#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "decompkan/error.hpp"
#include "decompkan/layers.hpp"
#include "decompkan/rng.hpp"
#include "decompkan/tensor.hpp"

// Preprocessing stages that wrap the forecasting branches. Internally every
// stage works on "series rows": one row per (window, channel) pair, columns
// are time steps. The public L×C entry points transpose at the boundary.

namespace decompkan {

// ---- RevIN -----------------------------------------------------------------

inline constexpr double kRevinEps = 1e-5;

/// Per-series statistics: sigma = sqrt(population variance + eps).
struct RevinState {
  std::vector<double> mu;
  std::vector<double> sigma;
  double eps = kRevinEps;
};

/// Row-wise RevIN on series rows (R×L).
inline Tensor2 revin_normalize_rows(const Tensor2& x, RevinState& state, double eps = kRevinEps) {
  if (x.cols() < 2) throw ShapeError("revin_normalize: need at least 2 time steps");
  const std::size_t R = x.rows(), L = x.cols();
  state.eps = eps;
  state.mu.assign(R, 0.0);
  state.sigma.assign(R, 0.0);
  Tensor2 out(R, L);
  for (std::size_t r = 0; r < R; ++r) {
    const auto row = x.row(r);
    double mean = 0.0;
    for (double v : row) mean += v;
    mean /= static_cast<double>(L);
    double var = 0.0;
    for (double v : row) var += (v - mean) * (v - mean);
    var /= static_cast<double>(L);
    const double sigma = std::sqrt(var + eps);
    state.mu[r] = mean;
    state.sigma[r] = sigma;
    for (std::size_t t = 0; t < L; ++t) out(r, t) = (row[t] - mean) / sigma;
  }
  return out;
}

inline Tensor2 revin_denormalize_rows(const Tensor2& y, const RevinState& state) {
  if (state.mu.size() != y.rows() || state.sigma.size() != y.rows()) {
    throw ShapeError("revin_denormalize: state has " + std::to_string(state.mu.size()) +
                     " series, input has " + std::to_string(y.rows()));
  }
  Tensor2 out(y.rows(), y.cols());
  for (std::size_t r = 0; r < y.rows(); ++r) {
    for (std::size_t t = 0; t < y.cols(); ++t) out(r, t) = y(r, t) * state.sigma[r] + state.mu[r];
  }
  return out;
}

/// x is L×C (time × channel); statistics are per channel.
inline std::pair<Tensor2, RevinState> revin_normalize(const Tensor2& x, double eps = kRevinEps) {
  RevinState st;
  Tensor2 rows = revin_normalize_rows(transpose(x), st, eps);
  return {transpose(rows), std::move(st)};
}

/// y is H×C.
inline Tensor2 revin_denormalize(const Tensor2& y, const RevinState& state) {
  if (state.mu.size() != y.cols()) {
    throw ShapeError("revin_denormalize: state has " + std::to_string(state.mu.size()) +
                     " channels, input has " + std::to_string(y.cols()));
  }
  return transpose(revin_denormalize_rows(transpose(y), state));
}

// ---- adaptive normalization --------------------------------------------------

/// stats_net: Dense(L→32) → GELU → Dense(32→d_s); norm_head: Dense(d_s→2);
/// denorm_head: Dense(d_s→8) → GELU → Dense(8→2). Heads output (δs, δb) with
/// scale = 1 + δs, so zeroed final layers give the identity transform.
struct AdaptiveNormParams {
  DenseParams stats_in;
  DenseParams stats_out;
  DenseParams norm_head;
  DenseParams denorm_hidden;
  DenseParams denorm_out;

  std::size_t lookback() const noexcept { return stats_in.in_dim(); }
  std::size_t stats_dim() const noexcept { return stats_out.out_dim(); }
  std::size_t param_count() const noexcept {
    return stats_in.param_count() + stats_out.param_count() + norm_head.param_count() +
           denorm_hidden.param_count() + denorm_out.param_count();
  }

  template <class F>
  void for_each(const std::string& prefix, F&& f) {
    stats_in.for_each(prefix + ".stats_in", f);
    stats_out.for_each(prefix + ".stats_out", f);
    norm_head.for_each(prefix + ".norm_head", f);
    denorm_hidden.for_each(prefix + ".denorm_hidden", f);
    denorm_out.for_each(prefix + ".denorm_out", f);
  }
  template <class F>
  void for_each(const std::string& prefix, F&& f) const {
    stats_in.for_each(prefix + ".stats_in", f);
    stats_out.for_each(prefix + ".stats_out", f);
    norm_head.for_each(prefix + ".norm_head", f);
    denorm_hidden.for_each(prefix + ".denorm_hidden", f);
    denorm_out.for_each(prefix + ".denorm_out", f);
  }
};

inline constexpr std::size_t kStatsHidden = 32;
inline constexpr std::size_t kDenormHidden = 8;

inline AdaptiveNormParams init_adaptive(Rng& rng, std::size_t lookback, std::size_t stats_dim = 8) {
  AdaptiveNormParams p;
  p.stats_in = init_dense(rng, lookback, kStatsHidden);
  p.stats_out = init_dense(rng, kStatsHidden, stats_dim);
  p.norm_head = DenseParams(stats_dim, 2);
  p.denorm_hidden = init_dense(rng, stats_dim, kDenormHidden);
  p.denorm_out = DenseParams(kDenormHidden, 2);
  return p;
}

struct AdaptiveCache {
  Tensor2 x_norm;       // R×L
  Tensor2 stats_pre;    // R×32, before GELU
  Tensor2 stats_act;    // R×32
  Tensor2 stats;        // R×d_s
  Tensor2 norm_out;     // R×2: (δs, δb)
};

struct AdaptiveDenormCache {
  Tensor2 y;            // R×H input to the head
  Tensor2 stats;        // R×d_s
  Tensor2 hidden_pre;   // R×8
  Tensor2 hidden_act;   // R×8
  Tensor2 out;          // R×2
};

/// x̂ = (1+δs)·x̃ + δb per row, with (δs, δb) = norm_head(stats_net(x̃)).
inline Tensor2 adaptive_forward_rows(const Tensor2& x_norm, const AdaptiveNormParams& p,
                                     AdaptiveCache& cache) {
  if (x_norm.cols() != p.lookback()) {
    throw ShapeError("adaptive_forward: series length " + std::to_string(x_norm.cols()) +
                     " but module built for " + std::to_string(p.lookback()));
  }
  cache.x_norm = x_norm;
  cache.stats_pre = dense_forward(x_norm, p.stats_in);
  cache.stats_act = gelu(cache.stats_pre);
  cache.stats = dense_forward(cache.stats_act, p.stats_out);
  cache.norm_out = dense_forward(cache.stats, p.norm_head);
  Tensor2 out(x_norm.rows(), x_norm.cols());
  for (std::size_t r = 0; r < out.rows(); ++r) {
    const double s = 1.0 + cache.norm_out(r, 0), b = cache.norm_out(r, 1);
    for (std::size_t t = 0; t < out.cols(); ++t) out(r, t) = s * x_norm(r, t) + b;
  }
  return out;
}

/// y' = (1+δs')·y + δb' with (δs', δb') = denorm_head(stats).
inline Tensor2 adaptive_denorm_rows(const Tensor2& y, const Tensor2& stats,
                                    const AdaptiveNormParams& p, AdaptiveDenormCache& cache) {
  if (stats.rows() != y.rows() || stats.cols() != p.stats_dim()) {
    throw ShapeError("adaptive_denorm: stats " + stats.shape_str() + " do not match " +
                     std::to_string(y.rows()) + " series");
  }
  cache.y = y;
  cache.stats = stats;
  cache.hidden_pre = dense_forward(stats, p.denorm_hidden);
  cache.hidden_act = gelu(cache.hidden_pre);
  cache.out = dense_forward(cache.hidden_act, p.denorm_out);
  Tensor2 res(y.rows(), y.cols());
  for (std::size_t r = 0; r < y.rows(); ++r) {
    const double s = 1.0 + cache.out(r, 0), b = cache.out(r, 1);
    for (std::size_t t = 0; t < y.cols(); ++t) res(r, t) = s * y(r, t) + b;
  }
  return res;
}

namespace detail {
inline Tensor2 gelu_backward(const Tensor2& pre, const Tensor2& upstream) {
  Tensor2 g = upstream;
  for (std::size_t i = 0; i < g.size(); ++i) g[i] *= gelu_deriv(pre[i]);
  return g;
}

// Gradient of (1+a)·v + b w.r.t. (a, b) per row.
inline Tensor2 affine_head_grad(const Tensor2& v, const Tensor2& upstream) {
  Tensor2 g(v.rows(), 2);
  for (std::size_t r = 0; r < v.rows(); ++r) {
    double ga = 0.0, gb = 0.0;
    for (std::size_t t = 0; t < v.cols(); ++t) {
      ga += upstream(r, t) * v(r, t);
      gb += upstream(r, t);
    }
    g(r, 0) = ga;
    g(r, 1) = gb;
  }
  return g;
}
}  // namespace detail

/// Backward through the denorm head. Returns dL/dy; adds dL/dstats into
/// `dstats` (R×d_s) and parameter gradients into `grads`.
inline Tensor2 adaptive_denorm_backward(const AdaptiveDenormCache& c, const AdaptiveNormParams& p,
                                        const Tensor2& upstream, Tensor2& dstats,
                                        AdaptiveNormParams& grads) {
  require_same_shape(upstream, c.y, "adaptive_denorm_backward");
  Tensor2 dy(upstream.rows(), upstream.cols());
  for (std::size_t r = 0; r < dy.rows(); ++r) {
    const double s = 1.0 + c.out(r, 0);
    for (std::size_t t = 0; t < dy.cols(); ++t) dy(r, t) = s * upstream(r, t);
  }
  const Tensor2 dout = detail::affine_head_grad(c.y, upstream);
  const Tensor2 dact = dense_backward(c.hidden_act, p.denorm_out, dout, grads.denorm_out);
  const Tensor2 dpre = detail::gelu_backward(c.hidden_pre, dact);
  add_inplace(dstats, dense_backward(c.stats, p.denorm_hidden, dpre, grads.denorm_hidden));
  return dy;
}

/// Backward through x̂ = s·x̃ + b. Adds dL/dstats into `dstats`. x̃ carries
/// no parameters upstream, so no input gradient is produced.
inline void adaptive_forward_backward(const AdaptiveCache& c, const AdaptiveNormParams& p,
                                      const Tensor2& upstream, Tensor2& dstats,
                                      AdaptiveNormParams& grads) {
  require_same_shape(upstream, c.x_norm, "adaptive_forward_backward");
  const Tensor2 dhead = detail::affine_head_grad(c.x_norm, upstream);
  add_inplace(dstats, dense_backward(c.stats, p.norm_head, dhead, grads.norm_head));
}

/// Backward through the stats network given the total dL/dstats.
inline void adaptive_stats_backward(const AdaptiveCache& c, const AdaptiveNormParams& p,
                                    const Tensor2& dstats, AdaptiveNormParams& grads) {
  const Tensor2 dact = dense_backward(c.stats_act, p.stats_out, dstats, grads.stats_out);
  const Tensor2 dpre = detail::gelu_backward(c.stats_pre, dact);
  dense_backward(c.x_norm, p.stats_in, dpre, grads.stats_in);
}

/// L×C convenience wrapper. Returns x̂ (L×C) and per-channel stats (C×d_s).
struct AdaptiveResult {
  Tensor2 x_hat;
  Tensor2 stats;
  std::vector<double> scale;
  std::vector<double> shift;
};

inline AdaptiveResult adaptive_forward(const Tensor2& x_norm, const AdaptiveNormParams& p) {
  AdaptiveCache c;
  Tensor2 rows = adaptive_forward_rows(transpose(x_norm), p, c);
  AdaptiveResult res{transpose(rows), c.stats, {}, {}};
  for (std::size_t r = 0; r < c.norm_out.rows(); ++r) {
    res.scale.push_back(1.0 + c.norm_out(r, 0));
    res.shift.push_back(c.norm_out(r, 1));
  }
  return res;
}

inline Tensor2 adaptive_denorm(const Tensor2& y, const Tensor2& stats, const AdaptiveNormParams& p) {
  AdaptiveDenormCache c;
  return transpose(adaptive_denorm_rows(transpose(y), stats, p, c));
}

// ---- decomposition ------------------------------------------------------------

/// Centered moving average with ⌊K/2⌋ replicate padding at both ends.
inline Tensor2 moving_average_rows(const Tensor2& x, std::size_t kernel) {
  if (kernel == 0 || kernel % 2 == 0) {
    throw ConfigError("decompose: moving-average kernel must be odd, got " + std::to_string(kernel));
  }
  const std::size_t L = x.cols();
  const long half = static_cast<long>(kernel / 2);
  const double inv = 1.0 / static_cast<double>(kernel);
  Tensor2 trend(x.rows(), L);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const auto row = x.row(r);
    for (std::size_t t = 0; t < L; ++t) {
      double s = 0.0;
      for (long u = -half; u <= half; ++u) {
        long idx = static_cast<long>(t) + u;
        idx = idx < 0 ? 0 : (idx >= static_cast<long>(L) ? static_cast<long>(L) - 1 : idx);
        s += row[static_cast<std::size_t>(idx)];
      }
      trend(r, t) = s * inv;
    }
  }
  return trend;
}

/// Adjoint of moving_average_rows.
inline Tensor2 moving_average_adjoint_rows(const Tensor2& g, std::size_t kernel) {
  const std::size_t L = g.cols();
  const long half = static_cast<long>(kernel / 2);
  const double inv = 1.0 / static_cast<double>(kernel);
  Tensor2 dx(g.rows(), L);
  for (std::size_t r = 0; r < g.rows(); ++r) {
    for (std::size_t t = 0; t < L; ++t) {
      const double gt = g(r, t) * inv;
      for (long u = -half; u <= half; ++u) {
        long idx = static_cast<long>(t) + u;
        idx = idx < 0 ? 0 : (idx >= static_cast<long>(L) ? static_cast<long>(L) - 1 : idx);
        dx(r, static_cast<std::size_t>(idx)) += gt;
      }
    }
  }
  return dx;
}

struct Decomposition {
  Tensor2 trend;
  Tensor2 residual;
};

/// Row-wise split into moving-average trend and residual = x - trend.
///
/// Where fl(trend + residual) misses x, the trend is re-derived as
/// x - residual, which restores exact reconstruction whenever a trend-only
/// correction can. When the trend dominates x (zero crossings) no such pair
/// of doubles exists and the sum is off by at most one ulp of the larger part.
inline Decomposition decompose_rows(const Tensor2& x, std::size_t kernel) {
  Decomposition d{moving_average_rows(x, kernel), Tensor2(x.rows(), x.cols())};
  for (std::size_t i = 0; i < x.size(); ++i) {
    d.residual[i] = x[i] - d.trend[i];
    if (d.trend[i] + d.residual[i] != x[i]) d.trend[i] = x[i] - d.residual[i];
  }
  return d;
}

/// x is L×C.
inline Decomposition decompose(const Tensor2& x, std::size_t kernel) {
  Decomposition d = decompose_rows(transpose(x), kernel);
  return {transpose(d.trend), transpose(d.residual)};
}

// ---- patching ------------------------------------------------------------------

struct PatchSpec {
  std::size_t patch_len = 16;
  std::size_t stride = 8;
  std::size_t embed_dim = 32;
  std::size_t lookback = 336;

  void validate() const {
    if (patch_len == 0 || stride == 0 || embed_dim == 0) {
      throw ConfigError("PatchSpec: patch_len, stride and embed_dim must be >= 1");
    }
    if (patch_len > lookback) {
      throw ConfigError("PatchSpec: patch length " + std::to_string(patch_len) +
                        " exceeds lookback " + std::to_string(lookback));
    }
  }
  std::size_t patch_count() const {
    validate();
    return (lookback - patch_len) / stride + 1;
  }
  std::size_t flat_dim() const { return patch_count() * embed_dim; }
};

/// R×L series rows → (R·N)×P patch matrix, patches in time order per row.
inline Tensor2 extract_patches_rows(const Tensor2& x, const PatchSpec& spec) {
  if (x.cols() != spec.lookback) {
    throw ShapeError("patch_embed: series length " + std::to_string(x.cols()) + " but spec expects " +
                     std::to_string(spec.lookback));
  }
  const std::size_t N = spec.patch_count(), P = spec.patch_len;
  Tensor2 patches(x.rows() * N, P);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t n = 0; n < N; ++n) {
      for (std::size_t k = 0; k < P; ++k) patches(r * N + n, k) = x(r, n * spec.stride + k);
    }
  }
  return patches;
}

/// Adjoint of extract_patches_rows (overlaps accumulate).
inline Tensor2 scatter_patches_rows(const Tensor2& dpatches, std::size_t rows, const PatchSpec& spec) {
  const std::size_t N = spec.patch_count(), P = spec.patch_len;
  Tensor2 dx(rows, spec.lookback);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t n = 0; n < N; ++n) {
      for (std::size_t k = 0; k < P; ++k) dx(r, n * spec.stride + k) += dpatches(r * N + n, k);
    }
  }
  return dx;
}

struct PatchCache {
  Tensor2 patches;  // (R·N)×P
  std::size_t rows = 0;
};

/// R×L → R×(N·d): shared dense P→d per patch, concatenated in patch order.
inline Tensor2 patch_embed_rows(const Tensor2& x, const PatchSpec& spec, const DenseParams& embed,
                                PatchCache* cache = nullptr) {
  Tensor2 patches = extract_patches_rows(x, spec);
  Tensor2 emb = dense_forward(patches, embed);
  if (cache) {
    cache->patches = std::move(patches);
    cache->rows = x.rows();
  }
  return std::move(emb).reshaped(x.rows(), spec.patch_count() * embed.out_dim());
}

inline Tensor2 patch_embed_backward(const PatchCache& c, const PatchSpec& spec,
                                    const DenseParams& embed, const Tensor2& upstream,
                                    DenseParams& grads) {
  const Tensor2 g = upstream.reshaped(c.rows * spec.patch_count(), embed.out_dim());
  const Tensor2 dpatches = dense_backward(c.patches, embed, g, grads);
  return scatter_patches_rows(dpatches, c.rows, spec);
}

/// Single-series form: series is L×1, result is the flat N·d vector (1×N·d).
inline Tensor2 patch_embed(const Tensor2& series, const PatchSpec& spec, const DenseParams& embed) {
  if (series.cols() != 1) throw ShapeError("patch_embed: expected an L×1 series");
  if (series.rows() < spec.patch_len) {
    throw ShapeError("patch_embed: series length " + std::to_string(series.rows()) +
                     " shorter than patch length " + std::to_string(spec.patch_len));
  }
  return patch_embed_rows(transpose(series), spec, embed);
}

}  // namespace decompkan
