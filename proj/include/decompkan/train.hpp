#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "decompkan/data.hpp"
#include "decompkan/error.hpp"
#include "decompkan/model.hpp"
#include "decompkan/rng.hpp"
#include "decompkan/tensor.hpp"
#include "decompkan/textio.hpp"
#include "json.hpp"

namespace decompkan {

struct TrainConfig {
  double lr = 1e-3;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 50;
  std::size_t patience = 10;
  double warmup_frac = 0.1;
  double clip_norm = 1.0;
  bool bidirectional = false;
  std::uint64_t seed = 42;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  // 0 = every window each epoch. A positive cap visits only the first N
  // shuffled batches per epoch; meant for smoke runs, not for the protocol.
  std::size_t max_batches_per_epoch = 0;

  void validate() const {
    if (!(lr > 0.0) || batch_size == 0 || max_epochs == 0 || patience == 0) {
      throw ConfigError("TrainConfig: lr > 0, batch_size, max_epochs and patience >= 1 required");
    }
    if (!(warmup_frac >= 0.0 && warmup_frac < 1.0)) throw ConfigError("TrainConfig: warmup_frac must be in [0, 1)");
    if (!(clip_norm > 0.0)) throw ConfigError("TrainConfig: clip_norm must be > 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0 && adam_eps > 0.0)) {
      throw ConfigError("TrainConfig: invalid Adam hyperparameters");
    }
  }

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

// ---- losses ----------------------------------------------------------------------

inline double mse(const Tensor2& pred, const Tensor2& target) {
  require_same_shape(pred, target, "mse");
  if (pred.size() == 0) throw ShapeError("mse: empty tensors");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += (pred[i] - target[i]) * (pred[i] - target[i]);
  return s / static_cast<double>(pred.size());
}

inline double mae(const Tensor2& pred, const Tensor2& target) {
  require_same_shape(pred, target, "mae");
  if (pred.size() == 0) throw ShapeError("mae: empty tensors");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += std::abs(pred[i] - target[i]);
  return s / static_cast<double>(pred.size());
}

/// dMSE/dpred.
inline Tensor2 mse_grad(const Tensor2& pred, const Tensor2& target) {
  require_same_shape(pred, target, "mse_grad");
  Tensor2 g(pred.rows(), pred.cols());
  const double k = 2.0 / static_cast<double>(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) g[i] = k * (pred[i] - target[i]);
  return g;
}

// ---- schedule ----------------------------------------------------------------------

inline std::size_t warmup_steps(std::size_t total_steps, double warmup_frac) {
  return static_cast<std::size_t>(std::ceil(warmup_frac * static_cast<double>(total_steps)));
}

/// Linear ramp 0 → peak over the first ⌈warmup_frac·total⌉ steps, then
/// half-cosine decay reaching 0 at step == total.
inline double cosine_warmup_lr(std::size_t step, std::size_t total_steps, double peak_lr, double warmup_frac) {
  if (step > total_steps) throw ConfigError("cosine_warmup_lr: step beyond total_steps");
  const std::size_t warm = warmup_steps(total_steps, warmup_frac);
  if (step < warm) return peak_lr * static_cast<double>(step) / static_cast<double>(warm);
  if (total_steps == warm) return peak_lr;
  const double progress = static_cast<double>(step - warm) / static_cast<double>(total_steps - warm);
  return peak_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

// ---- optimizer -----------------------------------------------------------------------

struct AdamState {
  std::vector<Tensor2> m;
  std::vector<Tensor2> v;
  std::uint64_t step = 0;
};

inline std::vector<Tensor2*> tensor_list(ModelParams& p) {
  std::vector<Tensor2*> out;
  p.for_each([&](const std::string&, Tensor2& t) { out.push_back(&t); });
  return out;
}

inline std::vector<const Tensor2*> tensor_list(const ModelParams& p) {
  std::vector<const Tensor2*> out;
  p.for_each([&](const std::string&, const Tensor2& t) { out.push_back(&t); });
  return out;
}

inline AdamState adam_init(std::span<const Tensor2* const> params) {
  AdamState s;
  for (const Tensor2* t : params) {
    s.m.emplace_back(t->rows(), t->cols());
    s.v.emplace_back(t->rows(), t->cols());
  }
  return s;
}

/// Bias-corrected Adam. Throws NumericError (naming the tensor index) if any
/// gradient is non-finite; parameters are left untouched in that case.
inline void adam_step(std::span<Tensor2* const> params, std::span<const Tensor2* const> grads, AdamState& s,
                      double lr, const TrainConfig& cfg) {
  if (params.size() != grads.size() || params.size() != s.m.size()) {
    throw ShapeError("adam_step: parameter, gradient and state lists differ in length");
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (!params[k]->same_shape(*grads[k]) || !params[k]->same_shape(s.m[k])) {
      throw ShapeError("adam_step: tensor " + std::to_string(k) + " shape mismatch");
    }
    if (!all_finite(*grads[k])) throw NumericError("adam_step: non-finite gradient in tensor " + std::to_string(k));
  }
  ++s.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(s.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(s.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    double* p = params[k]->data();
    const double* g = grads[k]->data();
    double* m = s.m[k].data();
    double* v = s.v[k].data();
    for (std::size_t i = 0; i < params[k]->size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1, vhat = v[i] / bc2;
      p[i] -= lr * mhat / (std::sqrt(vhat) + cfg.adam_eps);
    }
  }
}

inline double global_norm(std::span<const Tensor2* const> grads) {
  double s = 0.0;
  for (const Tensor2* g : grads) s += sum_squares(*g);
  return std::sqrt(s);
}

/// Scales every gradient by max_norm/‖g‖ when the global L2 norm exceeds
/// max_norm. Returns the norm before clipping.
inline double clip_grad_norm(std::span<Tensor2* const> grads, double max_norm) {
  if (!(max_norm > 0.0)) throw ConfigError("clip_grad_norm: max_norm must be > 0");
  std::vector<const Tensor2*> view(grads.begin(), grads.end());
  const double norm = global_norm(view);
  if (norm > max_norm) {
    const double k = max_norm / norm;
    for (Tensor2* g : grads)
      for (double& v : g->values()) v *= k;
  }
  return norm;
}

// ---- evaluation ------------------------------------------------------------------------

struct SplitMetrics {
  double mse = 0.0;
  double mae = 0.0;
  std::size_t windows = 0;
};

inline constexpr std::size_t kEvalBatch = 64;

/// Forward-time windows of a split, averaged uniformly over windows and
/// elements (in standardized units).
inline SplitMetrics evaluate_split(const ModelParams& p, const ModelConfig& cfg, const SeriesDataset& ds,
                                   SplitKind kind) {
  const auto samples = split_samples(ds, kind, cfg.lookback, cfg.horizon, false);
  if (samples.empty()) throw ConfigError(ds.name + ": empty " + std::string(to_string(kind)) + " split");
  double se = 0.0, ae = 0.0;
  std::size_t n = 0;
  Tensor2 x, y;
  ModelCache cache;
  for (std::size_t b = 0; b < samples.size(); b += kEvalBatch) {
    const std::size_t e = std::min(samples.size(), b + kEvalBatch);
    fill_batch(ds, std::span<const Sample>(samples).subspan(b, e - b), cfg.lookback, cfg.horizon, x, y);
    const Tensor2 pred = forward_rows(x, p, cfg, cache);
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const double d = pred[i] - y[i];
      se += d * d;
      ae += std::abs(d);
    }
    n += pred.size();
  }
  return {se / static_cast<double>(n), ae / static_cast<double>(n), samples.size()};
}

// ---- training loop ----------------------------------------------------------------------

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_mse = 0.0;
  double lr = 0.0;  // rate used by the epoch's last update
  friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

struct RunRecord {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_val_mse = 0.0;
  std::size_t stop_epoch = 0;
  bool early_stopped = false;
  std::size_t total_steps = 0;
  std::size_t train_samples = 0;
  double wall_seconds = 0.0;  // not part of to_json(); kept out of reproducible files

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["best_epoch"] = best_epoch;
    j["best_val_mse"] = best_val_mse;
    j["stop_epoch"] = stop_epoch;
    j["early_stopped"] = early_stopped;
    j["total_steps"] = total_steps;
    j["train_samples"] = train_samples;
    auto& arr = j["epochs"] = nlohmann::ordered_json::array();
    for (const auto& e : epochs) {
      arr.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_mse", e.val_mse}, {"lr", e.lr}});
    }
    return j;
  }

  std::string to_csv() const {
    std::string s = "epoch,train_loss,val_mse,lr\n";
    for (const auto& e : epochs) {
      s += std::to_string(e.epoch) + "," + format_double17(e.train_loss) + "," + format_double17(e.val_mse) +
           "," + format_double17(e.lr) + "\n";
    }
    return s;
  }

  bool same_trajectory(const RunRecord& o) const {
    return epochs == o.epochs && best_epoch == o.best_epoch && best_val_mse == o.best_val_mse &&
           stop_epoch == o.stop_epoch && early_stopped == o.early_stopped && total_steps == o.total_steps;
  }
};

/// Optional observers. `on_epoch` sees each finished epoch; `validation`
/// replaces the built-in validation MSE (tests use it to script curves).
struct FitHooks {
  std::function<void(const EpochRecord&)> on_epoch;
  std::function<double(const ModelParams&, std::size_t epoch)> validation;
};

inline std::size_t batches_per_epoch(std::size_t samples, const TrainConfig& tc) {
  std::size_t n = (samples + tc.batch_size - 1) / tc.batch_size;
  if (tc.max_batches_per_epoch > 0) n = std::min(n, tc.max_batches_per_epoch);
  return n;
}

/// Mini-batch Adam on MSE with warmup-cosine schedule, global-norm clipping
/// and early stopping on validation MSE. On return `params` holds the
/// best-validation epoch's weights.
inline RunRecord fit(ModelParams& params, const ModelConfig& cfg, const SeriesDataset& ds, const TrainConfig& tc,
                     const FitHooks& hooks = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  cfg.validate();
  tc.validate();
  if (ds.channels() != cfg.channels) {
    throw ConfigError("fit: dataset has " + std::to_string(ds.channels()) + " channels, config " +
                      std::to_string(cfg.channels));
  }
  std::vector<Sample> samples = split_samples(ds, SplitKind::train, cfg.lookback, cfg.horizon, tc.bidirectional);
  if (samples.empty()) throw ConfigError(ds.name + ": no training windows");
  if (!hooks.validation) window_origins(ds, SplitKind::val, cfg.lookback, cfg.horizon);

  RunRecord rec;
  rec.train_samples = samples.size();
  const std::size_t per_epoch = batches_per_epoch(samples.size(), tc);
  rec.total_steps = per_epoch * tc.max_epochs;

  auto ptrs = tensor_list(params);
  AdamState adam = adam_init(tensor_list(std::as_const(params)));
  GradStore grads = zeros_like(params);
  auto gptrs = tensor_list(grads);
  std::vector<const Tensor2*> gconst(gptrs.begin(), gptrs.end());
  Rng shuffler = Rng(tc.seed).split(3);

  ModelParams best = params;
  double best_val = INFINITY;
  std::size_t since_best = 0, step = 0;
  Tensor2 x, y;
  ModelCache cache;

  for (std::size_t epoch = 1; epoch <= tc.max_epochs; ++epoch) {
    shuffler.shuffle(samples);
    double loss_sum = 0.0;
    std::size_t loss_n = 0;
    double lr = 0.0;
    for (std::size_t b = 0; b < per_epoch; ++b) {
      const std::size_t lo = b * tc.batch_size, hi = std::min(samples.size(), lo + tc.batch_size);
      fill_batch(ds, std::span<const Sample>(samples).subspan(lo, hi - lo), cfg.lookback, cfg.horizon, x, y);
      const auto where = [&] { return " (epoch " + std::to_string(epoch) + ", batch " + std::to_string(b + 1) + ")"; };
      try {
        const Tensor2 pred = forward_rows(x, params, cfg, cache);
        const double loss = mse(pred, y);
        if (!std::isfinite(loss)) throw NumericError("training loss is not finite");
        loss_sum += loss * static_cast<double>(pred.size());
        loss_n += pred.size();
        for (Tensor2* g : gptrs) g->fill(0.0);
        backward_rows(cache, params, cfg, mse_grad(pred, y), grads);
        clip_grad_norm(gptrs, tc.clip_norm);
        lr = cosine_warmup_lr(step, rec.total_steps, tc.lr, tc.warmup_frac);
        adam_step(ptrs, gconst, adam, lr, tc);
      } catch (const NumericError& e) {
        throw NumericError(e.what() + where());
      }
      ++step;
    }

    EpochRecord er;
    er.epoch = epoch;
    er.train_loss = loss_sum / static_cast<double>(loss_n);
    er.val_mse = hooks.validation ? hooks.validation(params, epoch)
                                  : evaluate_split(params, cfg, ds, SplitKind::val).mse;
    er.lr = lr;
    rec.epochs.push_back(er);
    if (hooks.on_epoch) hooks.on_epoch(er);

    if (er.val_mse < best_val) {
      best_val = er.val_mse;
      best = params;
      rec.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= tc.patience) {
      rec.early_stopped = true;
      rec.stop_epoch = epoch;
      break;
    }
    rec.stop_epoch = epoch;
  }
  if (!std::isfinite(best_val)) throw NumericError("validation MSE never finite");
  params = std::move(best);
  rec.best_val_mse = best_val;
  rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rec;
}

}  // namespace decompkan
