#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <mutex>
#include <numeric>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "decompkan/checkpoint.hpp"
#include "decompkan/data.hpp"
#include "decompkan/model.hpp"
#include "decompkan/textio.hpp"
#include "decompkan/train.hpp"
#include "json.hpp"

namespace decompkan {

// ---- parallel helper ---------------------------------------------------------------------

/// Runs fn(0..n-1) on up to `jobs` threads. Results land by index, so the
/// output does not depend on scheduling. The first exception is rethrown
/// after all workers stop.
template <class T>
std::vector<T> parallel_map(std::size_t n, std::size_t jobs, const std::function<T(std::size_t)>& fn) {
  std::vector<std::optional<T>> slots(n);
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  auto worker = [&] {
    for (std::size_t k; (k = next.fetch_add(1)) < n;) {
      try {
        slots[k] = fn(k);
      } catch (...) {
        std::lock_guard lock(error_mu);
        if (!error) error = std::current_exception();
      }
    }
  };
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (error) std::rethrow_exception(error);
  std::vector<T> out;
  out.reserve(n);
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

// ---- metrics ------------------------------------------------------------------------------

/// Stable hash of everything that determines a run's numbers.
inline std::string config_fingerprint(const ModelConfig& m, const TrainConfig& t, const std::string& dataset) {
  std::string s = "dataset=" + dataset + "\n";
  for (const auto& [k, v] : model_config_items(m)) s += "model." + k + "=" + v + "\n";
  s += "train.lr=" + format_double(t.lr) + "\ntrain.batch_size=" + std::to_string(t.batch_size) +
       "\ntrain.max_epochs=" + std::to_string(t.max_epochs) + "\ntrain.patience=" + std::to_string(t.patience) +
       "\ntrain.warmup_frac=" + format_double(t.warmup_frac) + "\ntrain.clip_norm=" + format_double(t.clip_norm) +
       "\ntrain.bidirectional=" + (t.bidirectional ? "true" : "false") + "\ntrain.seed=" + std::to_string(t.seed) +
       "\ntrain.beta1=" + format_double(t.beta1) + "\ntrain.beta2=" + format_double(t.beta2) +
       "\ntrain.adam_eps=" + format_double(t.adam_eps) +
       "\ntrain.max_batches_per_epoch=" + std::to_string(t.max_batches_per_epoch) + "\n";
  return hex64(fnv1a64(s));
}

struct MetricReport {
  std::string dataset;
  std::size_t horizon = 0;
  std::uint64_t seed = 0;
  double mse = 0.0;
  double mae = 0.0;
  std::size_t windows = 0;
  std::string fingerprint;
  double runtime_seconds = 0.0;  // excluded from to_json()

  nlohmann::ordered_json to_json() const {
    return {{"dataset", dataset}, {"horizon", horizon}, {"seed", seed},       {"mse", mse},
            {"mae", mae},         {"windows", windows}, {"fingerprint", fingerprint}};
  }
};

inline MetricReport evaluate(const ModelParams& p, const ModelConfig& cfg, const SeriesDataset& ds,
                             SplitKind split = SplitKind::test, std::uint64_t seed = 0,
                             const std::string& fingerprint = "") {
  const auto t0 = std::chrono::steady_clock::now();
  const SplitMetrics m = evaluate_split(p, cfg, ds, split);
  MetricReport r;
  r.dataset = ds.name;
  r.horizon = cfg.horizon;
  r.seed = seed;
  r.mse = m.mse;
  r.mae = m.mae;
  r.windows = m.windows;
  r.fingerprint = fingerprint;
  r.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

/// Builds, trains and tests one model; the unit every driver below repeats.
struct RunOutcome {
  ModelParams params;
  RunRecord record;
  MetricReport test;
};

inline RunOutcome train_and_evaluate(const ModelConfig& cfg, const TrainConfig& tc, const SeriesDataset& ds,
                                     const FitHooks& hooks = {}) {
  RunOutcome out;
  out.params = init_model(Rng(tc.seed), cfg);
  out.record = fit(out.params, cfg, ds, tc, hooks);
  out.test = evaluate(out.params, cfg, ds, SplitKind::test, tc.seed, config_fingerprint(cfg, tc, ds.name));
  out.test.runtime_seconds = out.record.wall_seconds;
  return out;
}

// ---- multi-seed -----------------------------------------------------------------------------

struct SeedSummary {
  std::vector<std::uint64_t> seeds;
  std::vector<double> values;        // successful seeds only, in seed order
  std::vector<std::uint64_t> failed;
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation (n - 1)

  bool flagged() const { return !failed.empty(); }
};

inline SeedSummary summarize(const std::vector<std::uint64_t>& seeds, const std::vector<double>& values) {
  if (seeds.size() != values.size()) throw ConfigError("summarize: seeds and values differ in length");
  SeedSummary s;
  s.seeds = seeds;
  s.values = values;
  if (values.empty()) return s;
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  if (values.size() > 1) {
    double v = 0.0;
    for (double x : values) v += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(v / static_cast<double>(values.size() - 1));
  }
  return s;
}

/// Runs `run(k, seeds[k])` for every seed; seeds whose run throws are
/// recorded as failed and excluded from the statistics.
inline SeedSummary multi_seed(const std::function<double(std::size_t, std::uint64_t)>& run,
                              const std::vector<std::uint64_t>& seeds, std::size_t jobs = 1,
                              std::vector<std::string>* errors = nullptr) {
  if (seeds.size() < 2) throw ConfigError("multi_seed: need at least 2 seeds");
  struct Slot {
    bool ok = false;
    double value = 0.0;
    std::string error;
  };
  const auto slots = parallel_map<Slot>(seeds.size(), jobs, [&](std::size_t k) {
    try {
      return Slot{true, run(k, seeds[k]), {}};
    } catch (const std::exception& e) {
      return Slot{false, 0.0, e.what()};
    }
  });
  std::vector<std::uint64_t> ok_seeds;
  std::vector<double> values;
  std::vector<std::uint64_t> failed;
  for (std::size_t k = 0; k < seeds.size(); ++k) {
    if (slots[k].ok) {
      ok_seeds.push_back(seeds[k]);
      values.push_back(slots[k].value);
    } else {
      failed.push_back(seeds[k]);
      if (errors) errors->push_back("seed " + std::to_string(seeds[k]) + ": " + slots[k].error);
    }
  }
  SeedSummary s = summarize(ok_seeds, values);
  s.seeds = seeds;
  s.failed = failed;
  return s;
}

/// "0.148±0.001": mean and sample std to 3 decimals.
inline std::string format_mean_std(const SeedSummary& s) {
  return format_fixed(s.mean, 3) + "±" + format_fixed(s.std, 3);
}

// ---- tuning grid ------------------------------------------------------------------------------

struct GridPoint {
  double lr = 1e-3;
  bool bidirectional = false;
  std::size_t lookback = 336;
  friend bool operator==(const GridPoint&, const GridPoint&) = default;
};

/// 3 learning rates × 2 augmentation settings × 2 lookbacks.
inline std::vector<GridPoint> tuning_points() {
  std::vector<GridPoint> pts;
  for (double lr : {1e-3, 5e-4, 2e-4})
    for (bool bidir : {false, true})
      for (std::size_t L : {336u, 512u}) pts.push_back({lr, bidir, L});
  return pts;
}

struct GridResult {
  std::vector<GridPoint> points;
  std::vector<double> val_mse;
  std::size_t best = 0;
};

/// Argmin of validation MSE; exact ties prefer the lower learning rate, then
/// L = 336, then augmentation off.
inline std::size_t select_grid_winner(const std::vector<GridPoint>& pts, const std::vector<double>& val) {
  if (pts.empty() || pts.size() != val.size()) throw ConfigError("grid: empty or mismatched results");
  std::size_t best = 0;
  auto better = [&](std::size_t a, std::size_t b) {
    if (val[a] != val[b]) return val[a] < val[b];
    if (pts[a].lr != pts[b].lr) return pts[a].lr < pts[b].lr;
    if (pts[a].lookback != pts[b].lookback) return pts[a].lookback == 336;
    return !pts[a].bidirectional && pts[b].bidirectional;
  };
  for (std::size_t k = 1; k < pts.size(); ++k)
    if (better(k, best)) best = k;
  return best;
}

/// `run` returns the validation MSE at H = 96 for one grid point.
inline GridResult tuning_grid(const std::function<double(const GridPoint&)>& run, std::size_t jobs = 1) {
  GridResult r;
  r.points = tuning_points();
  r.val_mse = parallel_map<double>(r.points.size(), jobs, [&](std::size_t k) { return run(r.points[k]); });
  r.best = select_grid_winner(r.points, r.val_mse);
  return r;
}

// ---- ablation sweep -----------------------------------------------------------------------------

inline std::vector<std::string> sweep_variants() {
  std::vector<std::string> v{"full"};
  for (const auto& a : ablation_variants()) v.push_back(a);
  v.push_back("no_bidirectional");
  return v;
}

/// Applies a sweep variant to a (model, train) pair.
inline std::pair<ModelConfig, TrainConfig> apply_variant(const ModelConfig& m, const TrainConfig& t,
                                                         const std::string& variant) {
  if (variant == "no_bidirectional") {
    TrainConfig t2 = t;
    t2.bidirectional = false;
    return {m, t2};
  }
  return {make_ablation(m, variant), t};
}

/// Δ% = (variant − full) / full × 100.
inline double delta_percent(double variant, double full) { return (variant - full) / full * 100.0; }

struct AblationRow {
  std::string variant;
  double mse = 0.0;
  double delta_pct = 0.0;
};

inline std::vector<AblationRow> ablation_sweep(const std::function<double(const std::string&)>& run,
                                               const std::vector<std::string>& variants, std::size_t jobs = 1) {
  if (variants.empty() || variants.front() != "full") throw ConfigError("ablation: first variant must be 'full'");
  const auto mses = parallel_map<double>(variants.size(), jobs, [&](std::size_t k) { return run(variants[k]); });
  std::vector<AblationRow> rows;
  for (std::size_t k = 0; k < variants.size(); ++k) rows.push_back({variants[k], mses[k], delta_percent(mses[k], mses[0])});
  return rows;
}

// ---- synthetic win-rate experiments ----------------------------------------------------------

/// Smallest-error MLP width for a parameter target; ties prefer the narrower
/// network. Throws when no width lands within ±20% of the target.
inline std::size_t match_mlp_hidden(ModelConfig mlp, std::size_t target) {
  std::size_t best = 1;
  double best_gap = INFINITY;
  for (std::size_t h = 1; h <= 4096; ++h) {
    mlp.mlp_hidden = h;
    const double gap = std::abs(static_cast<double>(count_params(mlp)) - static_cast<double>(target));
    if (gap < best_gap) {
      best_gap = gap;
      best = h;
    }
  }
  if (best_gap > 0.2 * static_cast<double>(target)) {
    throw ConfigError("no MLP width within 20% of " + std::to_string(target) + " parameters");
  }
  return best;
}

struct SynthOptions {
  std::size_t trials = 10;
  std::uint64_t seed = 0;
  std::size_t lookback = 96;
  std::size_t horizon = 96;
  std::size_t length = 2000;
  std::size_t kan_hidden = 16;
  std::size_t kan_depth = 1;
  std::size_t patch_len = 16;
  std::size_t stride = 8;
  std::size_t embed_dim = 8;
  std::size_t ma_kernel = 25;
  double lr = 3e-3;
  std::size_t epochs = 40;
  std::size_t k_min = 1;
  std::size_t k_max = 10;
  std::size_t jobs = 1;
};

/// Contenders feed raw values straight into the core: no RevIN, no adaptive
/// normalization, no patching and no decomposition unless stated.
inline ModelConfig synth_kan(const SynthOptions& o) {
  ModelConfig c;
  c.lookback = o.lookback;
  c.horizon = o.horizon;
  c.kan_hidden = o.kan_hidden;
  c.kan_depth = o.kan_depth;
  c.patch_len = o.patch_len;
  c.stride = o.stride;
  c.embed_dim = o.embed_dim;
  c.ma_kernel = o.ma_kernel;
  c.use_revin = c.use_adaptive = c.use_patching = c.use_decomposition = false;
  return c;
}

inline ModelConfig synth_mlp(const SynthOptions& o) {
  ModelConfig c = synth_kan(o);
  c.residual_core = CoreKind::mlp;
  c.mlp_hidden = match_mlp_hidden(c, count_params(synth_kan(o)));
  return c;
}

/// MLP on the moving-average trend, KAN on the residual; each branch is the
/// size of the corresponding single-core contender.
inline ModelConfig synth_hybrid(const SynthOptions& o) {
  ModelConfig c = synth_kan(o);
  c.use_decomposition = true;
  c.trend_core = CoreKind::mlp;
  c.mlp_hidden = synth_mlp(o).mlp_hidden;
  return c;
}

inline ModelConfig synth_kan_patched(const SynthOptions& o) {
  ModelConfig c = synth_kan(o);
  c.use_patching = true;
  return c;
}

inline TrainConfig synth_train(const SynthOptions& o, std::uint64_t seed) {
  TrainConfig t;
  t.lr = o.lr;
  t.max_epochs = o.epochs;
  t.patience = o.epochs;
  t.bidirectional = false;
  t.seed = seed;
  return t;
}

struct RatioStats {
  double min = 0.0, median = 0.0, max = 0.0;
};

struct WinRateResult {
  std::string experiment;
  std::string signal;
  std::vector<std::string> contenders;
  std::vector<std::size_t> params;
  std::vector<std::vector<double>> mse;  // [trial][contender]
  std::vector<std::size_t> wins;         // trials where the contender is the unique minimum
  std::size_t ties = 0;                  // trials without a unique minimum

  std::size_t trials() const { return mse.size(); }

  std::size_t index(const std::string& name) const {
    const auto it = std::find(contenders.begin(), contenders.end(), name);
    if (it == contenders.end()) throw ConfigError("unknown contender '" + name + "'");
    return static_cast<std::size_t>(it - contenders.begin());
  }

  /// Trials where a's MSE is strictly below b's.
  std::size_t beats(const std::string& a, const std::string& b) const {
    const std::size_t i = index(a), j = index(b);
    std::size_t n = 0;
    for (const auto& row : mse) n += row[i] < row[j];
    return n;
  }

  /// Per-trial mse(b) / mse(a).
  RatioStats ratio(const std::string& a, const std::string& b) const {
    const std::size_t i = index(a), j = index(b);
    std::vector<double> r;
    for (const auto& row : mse) r.push_back(row[j] / row[i]);
    if (r.empty()) return {};
    std::sort(r.begin(), r.end());
    const std::size_t n = r.size();
    const double med = n % 2 ? r[n / 2] : 0.5 * (r[n / 2 - 1] + r[n / 2]);
    return {r.front(), med, r.back()};
  }

  double mean_mse(const std::string& name) const {
    const std::size_t i = index(name);
    double s = 0.0;
    for (const auto& row : mse) s += row[i];
    return mse.empty() ? 0.0 : s / static_cast<double>(mse.size());
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["experiment"] = experiment;
    j["signal"] = signal;
    j["contenders"] = contenders;
    j["params"] = params;
    j["mse"] = mse;
    j["wins"] = wins;
    j["ties"] = ties;
    return j;
  }
};

inline void tally_wins(WinRateResult& r) {
  r.wins.assign(r.contenders.size(), 0);
  r.ties = 0;
  for (const auto& row : r.mse) {
    const auto lo = std::min_element(row.begin(), row.end());
    if (std::count(row.begin(), row.end(), *lo) > 1) {
      ++r.ties;
    } else {
      ++r.wins[static_cast<std::size_t>(lo - row.begin())];
    }
  }
}

struct SynthArm {
  std::string name;
  ModelConfig cfg;
};

/// Trains every arm on `trials` fresh signals. Trial t draws its signal from
/// stream 2t of `root` and its initialization/shuffling seed from 2t + 1.
inline WinRateResult run_win_rate(const std::string& experiment, SyntheticSpec signal,
                                  const std::vector<SynthArm>& arms, const SynthOptions& o, const Rng& root,
                                  std::size_t trials) {
  WinRateResult r;
  r.experiment = experiment;
  r.signal = std::string(to_string(signal.kind));
  for (const auto& a : arms) {
    r.contenders.push_back(a.name);
    r.params.push_back(count_params(a.cfg));
  }
  const std::size_t n_arms = arms.size();
  const auto flat = parallel_map<double>(trials * n_arms, o.jobs, [&](std::size_t k) {
    const std::size_t t = k / n_arms, a = k % n_arms;
    SyntheticSpec spec = signal;
    spec.seed = root.split(2 * t).next_u64();
    const SeriesDataset ds = gen_synthetic(spec);
    const TrainConfig tc = synth_train(o, root.split(2 * t + 1).next_u64());
    return train_and_evaluate(arms[a].cfg, tc, ds).test.mse;
  });
  for (std::size_t t = 0; t < trials; ++t) {
    r.mse.emplace_back(flat.begin() + static_cast<std::ptrdiff_t>(t * n_arms),
                       flat.begin() + static_cast<std::ptrdiff_t>((t + 1) * n_arms));
  }
  tally_wins(r);
  return r;
}

/// Step 1: kan vs mlp on a bounded square-like periodic wave, then on the
/// same wave plus 0.002·t. Step 2: hybrid vs mlp vs kan on sine + cosine +
/// trend. Step 3: kan, kan with patching and mlp on k random sinusoids for
/// k in [k_min, k_max], one result per k.
inline std::vector<WinRateResult> synth_experiment(int step, const SynthOptions& o) {
  if (o.trials == 0) throw ConfigError("synth: trials must be >= 1");
  const Rng root = Rng(o.seed).split(static_cast<std::uint64_t>(step));
  SyntheticSpec base;
  base.length = o.length;
  std::vector<WinRateResult> out;
  switch (step) {
    case 1: {
      const std::vector<SynthArm> arms{{"kan", synth_kan(o)}, {"mlp", synth_mlp(o)}};
      SyntheticSpec periodic = base;
      periodic.kind = SyntheticKind::saturated_sine;
      out.push_back(run_win_rate("step1_periodic", periodic, arms, o, root.split(0), o.trials));
      SyntheticSpec trend = periodic;
      trend.slope = 0.002;
      out.push_back(run_win_rate("step1_trend", trend, arms, o, root.split(1), o.trials));
      break;
    }
    case 2: {
      const std::vector<SynthArm> arms{{"hybrid", synth_hybrid(o)}, {"mlp", synth_mlp(o)}, {"kan", synth_kan(o)}};
      SyntheticSpec sig = base;
      sig.kind = SyntheticKind::sine_plus_trend;
      out.push_back(run_win_rate("step2", sig, arms, o, root, o.trials));
      break;
    }
    case 3: {
      if (o.k_min < 1 || o.k_min > o.k_max) throw ConfigError("synth: need 1 <= k_min <= k_max");
      const std::vector<SynthArm> arms{
          {"kan", synth_kan(o)}, {"kan_patch", synth_kan_patched(o)}, {"mlp", synth_mlp(o)}};
      for (std::size_t k = o.k_min; k <= o.k_max; ++k) {
        SyntheticSpec sig = base;
        sig.kind = SyntheticKind::k_sinusoids;
        sig.k = k;
        out.push_back(run_win_rate("step3_k" + std::to_string(k), sig, arms, o, root.split(k), o.trials));
      }
      break;
    }
    default:
      throw ConfigError("synth: step must be 1, 2 or 3, got " + std::to_string(step));
  }
  return out;
}

// ---- tables --------------------------------------------------------------------------------------

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::string markdown() const {
    std::string s = "|";
    for (const auto& h : header) s += " " + h + " |";
    s += "\n|";
    for (std::size_t k = 0; k < header.size(); ++k) s += " --- |";
    s += "\n";
    for (const auto& r : rows) {
      s += "|";
      for (const auto& c : r) s += " " + c + " |";
      s += "\n";
    }
    return s;
  }

  std::string csv() const {
    auto line = [](const std::vector<std::string>& cells) {
      std::string s;
      for (std::size_t k = 0; k < cells.size(); ++k) s += (k ? "," : "") + cells[k];
      return s + "\n";
    };
    std::string s = line(header);
    for (const auto& r : rows) s += line(r);
    return s;
  }
};

inline Table ablation_table(const std::vector<AblationRow>& rows) {
  Table t{{"variant", "mse", "delta_pct"}, {}};
  for (const auto& r : rows) {
    const std::string d = (r.delta_pct >= 0 ? "+" : "") + format_fixed(r.delta_pct, 1) + "%";
    t.rows.push_back({r.variant, format_fixed(r.mse, 3), d});
  }
  return t;
}

/// One row per experiment: mean MSE and win count for every contender.
inline Table win_rate_table(const std::vector<WinRateResult>& results) {
  Table t{{"experiment", "signal", "contender", "params", "mean_mse", "wins", "trials", "ties"}, {}};
  for (const auto& r : results) {
    for (std::size_t c = 0; c < r.contenders.size(); ++c) {
      t.rows.push_back({r.experiment, r.signal, r.contenders[c], std::to_string(r.params[c]),
                        format_double17(r.mean_mse(r.contenders[c])), std::to_string(r.wins[c]),
                        std::to_string(r.trials()), std::to_string(r.ties)});
    }
  }
  return t;
}

inline Table seed_table(const std::string& dataset, std::size_t horizon, const SeedSummary& s) {
  Table t{{"dataset", "horizon", "seeds", "mse", "failed"}, {}};
  std::string failed;
  for (std::size_t k = 0; k < s.failed.size(); ++k) failed += (k ? ";" : "") + std::to_string(s.failed[k]);
  t.rows.push_back({dataset, std::to_string(horizon), std::to_string(s.values.size()), format_mean_std(s),
                    failed.empty() ? "-" : failed});
  return t;
}

inline Table grid_table(const GridResult& g) {
  Table t{{"lr", "bidirectional", "lookback", "val_mse", "selected"}, {}};
  for (std::size_t k = 0; k < g.points.size(); ++k) {
    t.rows.push_back({format_double(g.points[k].lr), g.points[k].bidirectional ? "on" : "off",
                      std::to_string(g.points[k].lookback), format_double17(g.val_mse[k]), k == g.best ? "*" : ""});
  }
  return t;
}

}  // namespace decompkan
