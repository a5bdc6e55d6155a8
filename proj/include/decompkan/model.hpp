#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "decompkan/error.hpp"
#include "decompkan/layers.hpp"
#include "decompkan/preprocess.hpp"
#include "decompkan/rng.hpp"
#include "decompkan/spline.hpp"
#include "decompkan/tensor.hpp"

namespace decompkan {

enum class CoreKind { kan, linear, mlp };

inline std::string_view to_string(CoreKind k) {
  switch (k) {
    case CoreKind::kan: return "kan";
    case CoreKind::linear: return "linear";
    case CoreKind::mlp: return "mlp";
  }
  return "?";
}

inline CoreKind parse_core_kind(std::string_view s) {
  if (s == "kan") return CoreKind::kan;
  if (s == "linear") return CoreKind::linear;
  if (s == "mlp") return CoreKind::mlp;
  throw ConfigError("unknown core kind '" + std::string(s) + "' (expected kan|linear|mlp)");
}

/// Architecture hyperparameters. Defaults are the fixed values used for every
/// benchmark dataset; only lookback and horizon vary per run.
struct ModelConfig {
  std::size_t lookback = 336;
  std::size_t horizon = 96;
  std::size_t channels = 1;
  std::size_t patch_len = 16;
  std::size_t stride = 8;
  std::size_t embed_dim = 32;
  std::size_t kan_hidden = 64;
  std::size_t kan_depth = 2;  // hidden layers; the KAN stack has depth+1 layers
  std::size_t grid_size = 5;
  std::size_t spline_order = 3;
  double grid_lo = -1.0;
  double grid_hi = 1.0;
  std::size_t ma_kernel = 25;
  std::size_t stats_dim = 8;
  std::size_t mlp_hidden = 64;
  bool use_decomposition = true;
  bool use_revin = true;
  bool use_adaptive = true;
  bool use_patching = true;
  CoreKind trend_core = CoreKind::kan;
  CoreKind residual_core = CoreKind::kan;

  PatchSpec patch_spec() const { return {patch_len, stride, embed_dim, lookback}; }
  SplineGrid spline_grid() const { return SplineGrid(grid_size, spline_order, grid_lo, grid_hi); }

  std::size_t patch_count() const { return patch_spec().patch_count(); }
  /// Width of the vector fed to each branch core.
  std::size_t core_input_dim() const {
    return use_patching ? patch_spec().flat_dim() : lookback;
  }
  /// Layer widths of a KAN core: [in, hidden × depth, horizon].
  std::vector<std::size_t> kan_widths() const {
    std::vector<std::size_t> w{core_input_dim()};
    for (std::size_t i = 0; i < kan_depth; ++i) w.push_back(kan_hidden);
    w.push_back(horizon);
    return w;
  }

  void validate() const {
    if (lookback < 2 || horizon < 1 || channels < 1) {
      throw ConfigError("ModelConfig: lookback >= 2, horizon >= 1 and channels >= 1 required");
    }
    if (use_patching) patch_spec().validate();
    if (ma_kernel == 0 || ma_kernel % 2 == 0) {
      throw ConfigError("ModelConfig: ma_kernel must be odd, got " + std::to_string(ma_kernel));
    }
    if (grid_size == 0 || !(grid_lo < grid_hi)) throw ConfigError("ModelConfig: invalid spline grid");
    if (kan_hidden == 0 || mlp_hidden == 0 || stats_dim == 0) {
      throw ConfigError("ModelConfig: hidden widths must be >= 1");
    }
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// ---- parameters ----------------------------------------------------------------

/// One Patch-KAN branch: optional patch embedding followed by a core.
struct BranchParams {
  CoreKind core = CoreKind::kan;
  std::optional<DenseParams> embed;
  std::vector<KanLayerParams> kan;
  std::vector<DenseParams> dense;

  template <class F>
  void for_each(const std::string& prefix, F&& f) {
    if (embed) embed->for_each(prefix + ".embed", f);
    for (std::size_t i = 0; i < kan.size(); ++i) kan[i].for_each(prefix + ".kan" + std::to_string(i), f);
    for (std::size_t i = 0; i < dense.size(); ++i) dense[i].for_each(prefix + ".dense" + std::to_string(i), f);
  }
  template <class F>
  void for_each(const std::string& prefix, F&& f) const {
    if (embed) embed->for_each(prefix + ".embed", f);
    for (std::size_t i = 0; i < kan.size(); ++i) kan[i].for_each(prefix + ".kan" + std::to_string(i), f);
    for (std::size_t i = 0; i < dense.size(); ++i) dense[i].for_each(prefix + ".dense" + std::to_string(i), f);
  }
};

/// Every learnable tensor of one model. Also used as the gradient store:
/// gradients mirror parameters by name and shape.
struct ModelParams {
  std::optional<AdaptiveNormParams> adaptive;
  std::optional<BranchParams> trend;
  BranchParams residual;

  template <class F>
  void for_each(F&& f) {
    if (adaptive) adaptive->for_each("adaptive", f);
    if (trend) trend->for_each("trend", f);
    residual.for_each("residual", f);
  }
  template <class F>
  void for_each(F&& f) const {
    if (adaptive) adaptive->for_each("adaptive", f);
    if (trend) trend->for_each("trend", f);
    residual.for_each("residual", f);
  }

  std::size_t param_count() const {
    std::size_t n = 0;
    for_each([&](const std::string&, const Tensor2& t) { n += t.size(); });
    return n;
  }

  std::vector<std::pair<std::string, std::pair<std::size_t, std::size_t>>> manifest() const {
    std::vector<std::pair<std::string, std::pair<std::size_t, std::size_t>>> m;
    for_each([&](const std::string& name, const Tensor2& t) {
      m.emplace_back(name, std::make_pair(t.rows(), t.cols()));
    });
    return m;
  }

  Tensor2* find(std::string_view name) {
    Tensor2* hit = nullptr;
    for_each([&](const std::string& n, Tensor2& t) {
      if (n == name) hit = &t;
    });
    return hit;
  }
};

using GradStore = ModelParams;

inline GradStore zeros_like(const ModelParams& p) {
  GradStore g = p;
  g.for_each([](const std::string&, Tensor2& t) { t.fill(0.0); });
  return g;
}

inline BranchParams init_branch(Rng& rng, const ModelConfig& cfg, CoreKind core) {
  BranchParams b;
  b.core = core;
  if (cfg.use_patching) b.embed = init_dense(rng, cfg.patch_len, cfg.embed_dim);
  const std::size_t in = cfg.core_input_dim();
  switch (core) {
    case CoreKind::kan: {
      const auto widths = cfg.kan_widths();
      const SplineGrid grid = cfg.spline_grid();
      for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
        b.kan.push_back(init_kan_layer(rng, widths[l], widths[l + 1], grid));
      }
      break;
    }
    case CoreKind::linear:
      b.dense.push_back(init_dense(rng, in, cfg.horizon));
      break;
    case CoreKind::mlp:
      b.dense.push_back(init_dense(rng, in, cfg.mlp_hidden));
      b.dense.push_back(init_dense(rng, cfg.mlp_hidden, cfg.mlp_hidden));
      b.dense.push_back(init_dense(rng, cfg.mlp_hidden, cfg.horizon));
      break;
  }
  return b;
}

/// Each sub-module draws from its own child stream of `rng`.
inline ModelParams init_model(const Rng& rng, const ModelConfig& cfg) {
  cfg.validate();
  ModelParams p;
  if (cfg.use_adaptive) {
    Rng r = rng.split(0);
    p.adaptive = init_adaptive(r, cfg.lookback, cfg.stats_dim);
  }
  if (cfg.use_decomposition) {
    Rng r = rng.split(1);
    p.trend = init_branch(r, cfg, cfg.trend_core);
  }
  Rng r = rng.split(2);
  p.residual = init_branch(r, cfg, cfg.residual_core);
  return p;
}

// ---- parameter counting -----------------------------------------------------------

namespace detail {
inline std::size_t core_param_count(const ModelConfig& cfg, CoreKind core) {
  const std::size_t in = cfg.core_input_dim(), H = cfg.horizon;
  switch (core) {
    case CoreKind::kan: {
      const auto w = cfg.kan_widths();
      std::size_t edges = 0;
      for (std::size_t l = 0; l + 1 < w.size(); ++l) edges += w[l] * w[l + 1];
      return edges * (cfg.grid_size + cfg.spline_order + 2);
    }
    case CoreKind::linear:
      return in * H + H;
    case CoreKind::mlp: {
      const std::size_t m = cfg.mlp_hidden;
      return (in * m + m) + (m * m + m) + (m * H + H);
    }
  }
  return 0;
}

inline std::size_t branch_param_count(const ModelConfig& cfg, CoreKind core) {
  const std::size_t embed = cfg.use_patching ? cfg.patch_len * cfg.embed_dim + cfg.embed_dim : 0;
  return embed + core_param_count(cfg, core);
}
}  // namespace detail

inline std::size_t adaptive_param_count(const ModelConfig& cfg) {
  if (!cfg.use_adaptive) return 0;
  const std::size_t L = cfg.lookback, ds = cfg.stats_dim, h = kStatsHidden, dh = kDenormHidden;
  return (L * h + h) + (h * ds + ds) + (ds * 2 + 2) + (ds * dh + dh) + (dh * 2 + 2);
}

/// Closed-form parameter count; KAN edges carry G + p + 2 parameters
/// (base weight, spline scaler and G + p coefficients).
inline std::size_t count_params(const ModelConfig& cfg) {
  cfg.validate();
  std::size_t n = adaptive_param_count(cfg);
  if (cfg.use_decomposition) n += detail::branch_param_count(cfg, cfg.trend_core);
  n += detail::branch_param_count(cfg, cfg.residual_core);
  return n;
}

// ---- ablations -----------------------------------------------------------------

inline const std::vector<std::string>& ablation_variants() {
  static const std::vector<std::string> v{"no_decomp", "no_adaptive", "no_revin", "core_linear",
                                          "core_mlp"};
  return v;
}

inline ModelConfig make_ablation(ModelConfig cfg, std::string_view variant) {
  if (variant == "full") return cfg;
  if (variant == "no_decomp") {
    cfg.use_decomposition = false;
  } else if (variant == "no_adaptive") {
    cfg.use_adaptive = false;
  } else if (variant == "no_revin") {
    cfg.use_revin = false;
  } else if (variant == "core_linear") {
    cfg.trend_core = cfg.residual_core = CoreKind::linear;
  } else if (variant == "core_mlp") {
    cfg.trend_core = cfg.residual_core = CoreKind::mlp;
  } else {
    throw ConfigError("unknown ablation variant '" + std::string(variant) + "'");
  }
  return cfg;
}

// ---- forward / backward -------------------------------------------------------------

struct BranchCache {
  PatchCache patch;
  std::vector<KanCache> kan;
  std::vector<Tensor2> dense_in;
  std::vector<Tensor2> dense_pre;
};

struct ModelCache {
  const ModelParams* params = nullptr;
  std::size_t rows = 0;
  std::size_t lookback = 0;
  RevinState revin;
  AdaptiveCache adaptive;
  AdaptiveDenormCache denorm;
  BranchCache trend;
  BranchCache residual;
};

namespace detail {

inline void check_finite(const Tensor2& t, const char* stage) {
  if (!all_finite(t)) throw NumericError(std::string("non-finite values after stage '") + stage + "'");
}

inline Tensor2 branch_forward(const Tensor2& x, const BranchParams& b, const ModelConfig& cfg,
                              BranchCache& c) {
  Tensor2 z = b.embed ? patch_embed_rows(x, cfg.patch_spec(), *b.embed, &c.patch) : x;
  switch (b.core) {
    case CoreKind::kan:
      c.kan.resize(b.kan.size());
      for (std::size_t l = 0; l < b.kan.size(); ++l) z = kan_forward(z, b.kan[l], &c.kan[l]);
      break;
    case CoreKind::linear:
    case CoreKind::mlp:
      c.dense_in.clear();
      c.dense_pre.clear();
      for (std::size_t l = 0; l < b.dense.size(); ++l) {
        c.dense_in.push_back(z);
        z = dense_forward(z, b.dense[l]);
        if (l + 1 < b.dense.size()) {
          c.dense_pre.push_back(z);
          z = gelu(z);
        }
      }
      break;
  }
  return z;
}

inline Tensor2 branch_backward(const BranchCache& c, const BranchParams& b, const ModelConfig& cfg,
                               Tensor2 g, BranchParams& grads) {
  switch (b.core) {
    case CoreKind::kan:
      if (c.kan.size() != b.kan.size()) throw InternalError("branch_backward: stale cache");
      for (std::size_t l = b.kan.size(); l-- > 0;) g = kan_backward(c.kan[l], b.kan[l], g, grads.kan[l]);
      break;
    case CoreKind::linear:
    case CoreKind::mlp:
      if (c.dense_in.size() != b.dense.size()) throw InternalError("branch_backward: stale cache");
      for (std::size_t l = b.dense.size(); l-- > 0;) {
        if (l + 1 < b.dense.size()) g = gelu_backward(c.dense_pre[l], g);
        g = dense_backward(c.dense_in[l], b.dense[l], g, grads.dense[l]);
      }
      break;
  }
  if (b.embed) g = patch_embed_backward(c.patch, cfg.patch_spec(), *b.embed, g, *grads.embed);
  return g;
}

}  // namespace detail

/// Series-row forward: x is R×L with one row per (window, channel); the
/// result is R×H. Channels share all weights, so folding them into rows is
/// exactly the channel-independent model.
inline Tensor2 forward_rows(const Tensor2& x, const ModelParams& p, const ModelConfig& cfg,
                            ModelCache& cache) {
  if (x.cols() != cfg.lookback) {
    throw ShapeError("forward: input length " + std::to_string(x.cols()) + " but config lookback is " +
                     std::to_string(cfg.lookback));
  }
  if (cfg.use_adaptive != p.adaptive.has_value() || cfg.use_decomposition != p.trend.has_value()) {
    throw ConfigError("forward: parameters were built for a different configuration");
  }
  cache.params = &p;
  cache.rows = x.rows();
  cache.lookback = x.cols();
  detail::check_finite(x, "input");

  Tensor2 z = cfg.use_revin ? revin_normalize_rows(x, cache.revin) : x;
  detail::check_finite(z, "revin");
  if (p.adaptive) {
    z = adaptive_forward_rows(z, *p.adaptive, cache.adaptive);
    detail::check_finite(z, "adaptive_norm");
  }

  Tensor2 y;
  if (p.trend) {
    Decomposition d = decompose_rows(z, cfg.ma_kernel);
    y = detail::branch_forward(d.trend, *p.trend, cfg, cache.trend);
    detail::check_finite(y, "trend_branch");
    Tensor2 yr = detail::branch_forward(d.residual, p.residual, cfg, cache.residual);
    detail::check_finite(yr, "residual_branch");
    add_inplace(y, yr);
  } else {
    y = detail::branch_forward(z, p.residual, cfg, cache.residual);
    detail::check_finite(y, "residual_branch");
  }

  if (p.adaptive) {
    y = adaptive_denorm_rows(y, cache.adaptive.stats, *p.adaptive, cache.denorm);
    detail::check_finite(y, "adaptive_denorm");
  }
  if (cfg.use_revin) y = revin_denormalize_rows(y, cache.revin);
  detail::check_finite(y, "revin_denorm");
  return y;
}

/// Accumulates dL/dθ for every parameter into `grads` given dL/dŷ (R×H).
/// RevIN statistics are constants of the window and receive no gradient.
inline void backward_rows(const ModelCache& cache, const ModelParams& p, const ModelConfig& cfg,
                          const Tensor2& upstream, GradStore& grads) {
  if (cache.params != &p || upstream.rows() != cache.rows || upstream.cols() != cfg.horizon) {
    throw InternalError("backward: cache does not match this forward call");
  }
  Tensor2 g = upstream;
  if (cfg.use_revin) {
    for (std::size_t r = 0; r < g.rows(); ++r) {
      for (std::size_t t = 0; t < g.cols(); ++t) g(r, t) *= cache.revin.sigma[r];
    }
  }
  Tensor2 dstats;
  if (p.adaptive) {
    dstats = Tensor2(cache.rows, p.adaptive->stats_dim());
    g = adaptive_denorm_backward(cache.denorm, *p.adaptive, g, dstats, *grads.adaptive);
  }

  Tensor2 dz;
  if (p.trend) {
    Tensor2 dtrend = detail::branch_backward(cache.trend, *p.trend, cfg, g, *grads.trend);
    Tensor2 dres = detail::branch_backward(cache.residual, p.residual, cfg, g, grads.residual);
    // trend = MA(z), residual = z - MA(z)
    dz = add(dres, moving_average_adjoint_rows(sub(std::move(dtrend), dres), cfg.ma_kernel));
  } else {
    dz = detail::branch_backward(cache.residual, p.residual, cfg, g, grads.residual);
  }

  if (p.adaptive) {
    adaptive_forward_backward(cache.adaptive, *p.adaptive, dz, dstats, *grads.adaptive);
    adaptive_stats_backward(cache.adaptive, *p.adaptive, dstats, *grads.adaptive);
  }
}

/// Time-major fold helpers: stack a list of L×C windows into (B·C)×L rows.
inline Tensor2 fold_windows(const std::vector<const Tensor2*>& windows) {
  if (windows.empty()) return {};
  const std::size_t T = windows.front()->rows(), C = windows.front()->cols();
  Tensor2 rows(windows.size() * C, T);
  for (std::size_t b = 0; b < windows.size(); ++b) {
    const Tensor2& w = *windows[b];
    if (w.rows() != T || w.cols() != C) throw ShapeError("fold_windows: ragged batch");
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t c = 0; c < C; ++c) rows(b * C + c, t) = w(t, c);
  }
  return rows;
}

/// Inverse of fold_windows for a single window's rows starting at `b·C`.
inline Tensor2 unfold_window(const Tensor2& rows, std::size_t b, std::size_t channels) {
  Tensor2 w(rows.cols(), channels);
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t t = 0; t < rows.cols(); ++t) w(t, c) = rows(b * channels + c, t);
  return w;
}

/// x is L×C; returns ŷ as H×C.
inline Tensor2 forward(const Tensor2& x, const ModelParams& p, const ModelConfig& cfg,
                       ModelCache* cache = nullptr) {
  if (x.cols() != cfg.channels) {
    throw ShapeError("forward: input has " + std::to_string(x.cols()) + " channels, config has " +
                     std::to_string(cfg.channels));
  }
  ModelCache local;
  ModelCache& c = cache ? *cache : local;
  return transpose(forward_rows(transpose(x), p, cfg, c));
}

/// dLoss/dŷ is H×C; returns a fresh gradient store.
inline GradStore backward(const ModelCache& cache, const ModelParams& p, const ModelConfig& cfg,
                          const Tensor2& dloss_dy) {
  GradStore g = zeros_like(p);
  backward_rows(cache, p, cfg, transpose(dloss_dy), g);
  return g;
}

}  // namespace decompkan
