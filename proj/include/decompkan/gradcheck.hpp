#pragma once

// Finite-difference verification of every backward pass: dense, KAN, the
// adaptive normalization stack and the composite model.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "decompkan/layers.hpp"
#include "decompkan/model.hpp"
#include "decompkan/preprocess.hpp"
#include "decompkan/rng.hpp"

namespace decompkan {

struct GradcheckOptions {
  std::size_t configs = 10;
  double step = 1e-5;
  double tolerance = 1e-4;
  // Denominator floor of the relative error. Central differences at step
  // 1e-5 carry ~1e-10 absolute roundoff, which a smaller floor would report
  // as relative error on near-zero gradients.
  double rel_floor = 1e-5;
  std::uint64_t seed = 0;
  // Fault injection for the negative control: every analytic gradient g is
  // replaced by g·(1 + corrupt) + corrupt before comparison.
  double corrupt = 0.0;
};

struct GradcheckEntry {
  std::string component;  // dense | kan | adaptive | composite
  std::string block;      // parameter tensor name
  double max_rel_err = 0.0;
  std::size_t checked = 0;
};

struct GradcheckReport {
  std::vector<GradcheckEntry> entries;
  double tolerance = 1e-4;

  const GradcheckEntry* worst() const {
    const GradcheckEntry* w = nullptr;
    for (const auto& e : entries)
      if (!w || e.max_rel_err > w->max_rel_err) w = &e;
    return w;
  }
  bool passed() const {
    return std::all_of(entries.begin(), entries.end(),
                       [&](const GradcheckEntry& e) { return e.max_rel_err < tolerance; });
  }
  double component_max(const std::string& component) const {
    double m = 0.0;
    for (const auto& e : entries)
      if (e.component == component) m = std::max(m, e.max_rel_err);
    return m;
  }
};

namespace detail {

class GradAccumulator {
 public:
  GradAccumulator(const GradcheckOptions& o, GradcheckReport& r) : opt_(o), report_(r) {}

  /// Central differences of `loss` for every element of `param` against
  /// `analytic`, folded into the entry (component, name).
  void check(const std::string& component, const std::string& name, Tensor2& param, const Tensor2& analytic,
             const std::function<double()>& loss) {
    GradcheckEntry& e = entry(component, name);
    for (std::size_t k = 0; k < param.size(); ++k) {
      const double orig = param[k];
      param[k] = orig + opt_.step;
      const double up = loss();
      param[k] = orig - opt_.step;
      const double down = loss();
      param[k] = orig;
      const double fd = (up - down) / (2.0 * opt_.step);
      const double a = analytic[k] * (1.0 + opt_.corrupt) + opt_.corrupt;
      const double err = std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), opt_.rel_floor});
      e.max_rel_err = std::max(e.max_rel_err, err);
      ++e.checked;
    }
  }

 private:
  GradcheckEntry& entry(const std::string& component, const std::string& name) {
    const auto key = component + "/" + name;
    auto it = index_.find(key);
    if (it == index_.end()) {
      it = index_.emplace(key, report_.entries.size()).first;
      report_.entries.push_back({component, name, 0.0, 0});
    }
    return report_.entries[it->second];
  }

  const GradcheckOptions& opt_;
  GradcheckReport& report_;
  std::map<std::string, std::size_t> index_;
};

inline double weighted(const Tensor2& y, const Tensor2& w) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * w[i];
  return s;
}

inline void check_dense(Rng& rng, GradAccumulator& acc) {
  const std::size_t in = 1 + rng.below(6), out = 1 + rng.below(5), rows = 1 + rng.below(5);
  DenseParams p = init_dense(rng, in, out);
  Tensor2 x = rand_normal(rng, 0, 1, rows, in);
  const Tensor2 w = rand_normal(rng, 0, 1, rows, out);
  DenseParams g(in, out);
  const Tensor2 dx = dense_backward(x, p, w, g);
  auto loss = [&] { return weighted(dense_forward(x, p), w); };
  acc.check("dense", "weight", p.weight, g.weight, loss);
  acc.check("dense", "bias", p.bias, g.bias, loss);
  acc.check("dense", "input", x, dx, loss);
}

inline void check_kan(Rng& rng, GradAccumulator& acc) {
  const std::size_t in = 1 + rng.below(7), out = 1 + rng.below(4), rows = 1 + rng.below(5);
  KanLayerParams p = init_kan_layer(rng, in, out, SplineGrid());
  p.spline_scaler = rand_uniform(rng, 0.5, 1.5, out, in);
  Tensor2 x = rand_normal(rng, 0, 0.8, rows, in);
  const Tensor2 w = rand_normal(rng, 0, 1, rows, out);
  KanCache cache;
  kan_forward(x, p, &cache);
  KanLayerParams g(in, out, p.grid);
  const Tensor2 dx = kan_backward(cache, p, w, g);
  auto loss = [&] { return weighted(kan_forward(x, p), w); };
  acc.check("kan", "base_weight", p.base_weight, g.base_weight, loss);
  acc.check("kan", "spline_coef", p.spline_coef, g.spline_coef, loss);
  acc.check("kan", "spline_scaler", p.spline_scaler, g.spline_scaler, loss);
  acc.check("kan", "input", x, dx, loss);
}

inline void check_adaptive(Rng& rng, GradAccumulator& acc) {
  const std::size_t L = 4 + rng.below(12), H = 1 + rng.below(6), R = 1 + rng.below(4);
  AdaptiveNormParams p = init_adaptive(rng, L, 8);
  p.norm_head = init_dense(rng, 8, 2);
  p.denorm_out = init_dense(rng, 8, 2);
  const Tensor2 x = rand_normal(rng, 0, 1, R, L), y = rand_normal(rng, 0, 1, R, H);
  const Tensor2 wx = rand_normal(rng, 0, 1, R, L), wy = rand_normal(rng, 0, 1, R, H);
  auto loss = [&] {
    AdaptiveCache c;
    AdaptiveDenormCache dc;
    const Tensor2 xh = adaptive_forward_rows(x, p, c);
    return weighted(xh, wx) + weighted(adaptive_denorm_rows(y, c.stats, p, dc), wy);
  };
  AdaptiveCache c;
  AdaptiveDenormCache dc;
  adaptive_forward_rows(x, p, c);
  adaptive_denorm_rows(y, c.stats, p, dc);
  AdaptiveNormParams g = p;
  g.for_each("", [](const std::string&, Tensor2& t) { t.fill(0.0); });
  Tensor2 dstats(R, p.stats_dim());
  adaptive_denorm_backward(dc, p, wy, dstats, g);
  adaptive_forward_backward(c, p, wx, dstats, g);
  adaptive_stats_backward(c, p, dstats, g);
  std::vector<Tensor2*> gs;
  g.for_each("adaptive", [&](const std::string&, Tensor2& t) { gs.push_back(&t); });
  std::size_t k = 0;
  p.for_each("adaptive", [&](const std::string& name, Tensor2& t) { acc.check("adaptive", name, t, *gs[k++], loss); });
}

/// The composite probe: L=32, P=S=8, H=4, C=2, KAN widths [N·d, 8, 8, H].
inline ModelConfig composite_config(Rng& rng) {
  ModelConfig cfg;
  cfg.lookback = 32;
  cfg.horizon = 4;
  cfg.channels = 2;
  cfg.patch_len = 8;
  cfg.stride = 8;
  cfg.embed_dim = 2 + rng.below(7);
  cfg.kan_hidden = 8;
  cfg.kan_depth = 2;
  cfg.ma_kernel = 3 + 2 * rng.below(3);
  return cfg;
}

inline void check_composite(Rng& rng, GradAccumulator& acc) {
  const ModelConfig cfg = composite_config(rng);
  ModelParams p = init_model(rng.split(7), cfg);
  p.for_each([&](const std::string& name, Tensor2& t) {
    const bool scaler = name.ends_with("spline_scaler");
    for (double& v : t.values()) v = scaler ? rng.uniform(0.5, 1.5) : v + rng.normal(0.0, 0.1);
  });
  const Tensor2 x = rand_normal(rng, rng.uniform(-2, 2), rng.uniform(0.5, 2), cfg.lookback, cfg.channels);
  const Tensor2 w = rand_normal(rng, 0, 1, cfg.horizon, cfg.channels);
  ModelCache cache;
  forward(x, p, cfg, &cache);
  GradStore g = backward(cache, p, cfg, w);
  std::vector<Tensor2*> gs;
  g.for_each([&](const std::string&, Tensor2& t) { gs.push_back(&t); });
  auto loss = [&] { return weighted(forward(x, p, cfg), w); };
  std::size_t k = 0;
  p.for_each([&](const std::string& name, Tensor2& t) { acc.check("composite", name, t, *gs[k++], loss); });
}

}  // namespace detail

/// Runs `configs` random instances of every component. Each instance draws
/// from its own child stream of the seed.
inline GradcheckReport run_gradcheck(const GradcheckOptions& opt = {}) {
  GradcheckReport report;
  report.tolerance = opt.tolerance;
  detail::GradAccumulator acc(opt, report);
  const Rng root(opt.seed);
  for (std::size_t c = 0; c < opt.configs; ++c) {
    Rng r0 = root.split(4 * c), r1 = root.split(4 * c + 1), r2 = root.split(4 * c + 2), r3 = root.split(4 * c + 3);
    detail::check_dense(r0, acc);
    detail::check_kan(r1, acc);
    detail::check_adaptive(r2, acc);
    detail::check_composite(r3, acc);
  }
  return report;
}

}  // namespace decompkan
