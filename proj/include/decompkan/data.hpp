#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "decompkan/error.hpp"
#include "decompkan/rng.hpp"
#include "decompkan/tensor.hpp"
#include "decompkan/textio.hpp"

namespace decompkan {

enum class SplitKind { train, val, test };

inline std::string_view to_string(SplitKind s) {
  switch (s) {
    case SplitKind::train: return "train";
    case SplitKind::val: return "val";
    case SplitKind::test: return "test";
  }
  return "?";
}

/// Half-open row range [begin, end).
struct Split {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const noexcept { return end - begin; }
  friend bool operator==(const Split&, const Split&) = default;
};

/// How a series is cut into train/val/test rows.
///   hourly_ett:  8640 / 2880 / 2880 rows (12 / 4 / 4 months of hourly data)
///   minute_ett:  34560 / 11520 / 11520 rows (the same months at 15 minutes)
///   ratio:       floor(0.7 T) / remainder / floor(0.2 T)
enum class SplitConvention { hourly_ett, minute_ett, ratio };

struct Splits {
  Split train, val, test;
  friend bool operator==(const Splits&, const Splits&) = default;
};

inline Splits make_splits(std::size_t T, SplitConvention conv) {
  std::size_t tr = 0, va = 0, te = 0;
  switch (conv) {
    case SplitConvention::hourly_ett: tr = 8640; va = 2880; te = 2880; break;
    case SplitConvention::minute_ett: tr = 34560; va = 11520; te = 11520; break;
    case SplitConvention::ratio:
      tr = T * 7 / 10;
      te = T * 2 / 10;
      va = T - tr - te;
      break;
  }
  if (tr + va + te > T) {
    throw DataError("series has " + std::to_string(T) + " rows but the split convention needs " +
                    std::to_string(tr + va + te));
  }
  return {{0, tr}, {tr, tr + va}, {tr + va, tr + va + te}};
}

/// A multivariate series, already standardized with train-split statistics.
struct SeriesDataset {
  std::string name;
  std::vector<std::string> columns;
  Tensor2 values;  // T × C, standardized
  std::vector<double> mean;
  std::vector<double> std;
  Splits splits;

  std::size_t length() const noexcept { return values.rows(); }
  std::size_t channels() const noexcept { return values.cols(); }
  const Split& split(SplitKind k) const noexcept {
    return k == SplitKind::train ? splits.train : k == SplitKind::val ? splits.val : splits.test;
  }
};

/// Per-channel mean and population std over the train rows, then z-score every
/// row with them. Constant channels keep std 1 so they map to zeros.
inline void standardize(SeriesDataset& ds) {
  const std::size_t C = ds.channels();
  const Split tr = ds.splits.train;
  if (tr.size() == 0) throw DataError(ds.name + ": empty train split");
  ds.mean.assign(C, 0.0);
  ds.std.assign(C, 0.0);
  for (std::size_t c = 0; c < C; ++c) {
    double s = 0.0;
    for (std::size_t t = tr.begin; t < tr.end; ++t) s += ds.values(t, c);
    const double mu = s / static_cast<double>(tr.size());
    double v = 0.0;
    for (std::size_t t = tr.begin; t < tr.end; ++t) v += (ds.values(t, c) - mu) * (ds.values(t, c) - mu);
    const double sd = std::sqrt(v / static_cast<double>(tr.size()));
    ds.mean[c] = mu;
    ds.std[c] = sd > 0.0 ? sd : 1.0;
  }
  for (std::size_t t = 0; t < ds.length(); ++t)
    for (std::size_t c = 0; c < C; ++c) ds.values(t, c) = (ds.values(t, c) - ds.mean[c]) / ds.std[c];
}

/// Reads `timestamp,ch1,...,chC` with a header row. Values are standardized
/// with train-split statistics of the given convention. `min_rows` lets the
/// caller reject series shorter than one L+H window up front.
inline SeriesDataset load_csv(const std::string& path, SplitConvention conv, std::size_t min_rows = 0,
                              std::string name = {}) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open data file '" + path + "'");
  SeriesDataset ds;
  ds.name = name.empty() ? path : std::move(name);
  std::string line;
  if (!std::getline(in, line)) throw DataError(path + ": empty file");
  const auto header = split_commas(trim(line));
  if (header.size() < 2) throw DataError(path + ": need a timestamp column and at least one channel");
  for (std::size_t k = 1; k < header.size(); ++k) ds.columns.emplace_back(trim(header[k]));
  const std::size_t C = ds.columns.size();

  std::vector<double> flat;
  std::size_t row = 0, lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto cells = split_commas(line);
    if (cells.size() != C + 1) {
      throw DataError(path + ": line " + std::to_string(lineno) + " has " + std::to_string(cells.size()) +
                      " fields, expected " + std::to_string(C + 1));
    }
    for (std::size_t k = 1; k <= C; ++k) {
      double v = 0.0;
      if (!try_parse_double(cells[k], v) || !std::isfinite(v)) {
        throw DataError(path + ": line " + std::to_string(lineno) + ", column " + std::to_string(k + 1) +
                        " ('" + ds.columns[k - 1] + "'): not a finite number: '" + std::string(cells[k]) + "'");
      }
      flat.push_back(v);
    }
    ++row;
  }
  if (row < min_rows) {
    throw ConfigError(path + ": " + std::to_string(row) + " rows, fewer than lookback + horizon = " +
                      std::to_string(min_rows));
  }
  ds.values = Tensor2(row, C, std::move(flat));
  ds.splits = make_splits(row, conv);
  standardize(ds);
  return ds;
}

// ---- windows ---------------------------------------------------------------------

enum class Direction { forward, reversed };

/// One training/evaluation sample: input rows [origin, origin+L), target rows
/// [origin+L, origin+L+H). A reversed sample is the same (L+H) segment read
/// backwards.
struct Sample {
  std::size_t origin = 0;
  Direction direction = Direction::forward;
  friend bool operator==(const Sample&, const Sample&) = default;
};

struct WindowPair {
  Tensor2 input;   // L × C
  Tensor2 target;  // H × C
  std::size_t origin = 0;
  Direction direction = Direction::forward;
};

/// Window origins for a split. Train windows lie entirely inside the train
/// rows; val/test windows borrow up to L rows of history from before the split
/// so every target row of the split can be forecast.
inline std::vector<std::size_t> window_origins(const SeriesDataset& ds, SplitKind kind, std::size_t L,
                                               std::size_t H) {
  const Split s = ds.split(kind);
  std::size_t first = 0, last_plus = 0;  // origins in [first, last_plus)
  if (kind == SplitKind::train) {
    if (s.size() < L + H) {
      throw ConfigError(ds.name + ": train split has " + std::to_string(s.size()) +
                        " rows, fewer than lookback + horizon = " + std::to_string(L + H));
    }
    first = s.begin;
    last_plus = s.end - L - H + 1;
  } else {
    if (s.begin < L || s.size() < H) {
      throw ConfigError(ds.name + ": " + std::string(to_string(kind)) +
                        " split cannot supply lookback " + std::to_string(L) + " and horizon " +
                        std::to_string(H));
    }
    first = s.begin - L;
    last_plus = s.end - H - L + 1;
  }
  std::vector<std::size_t> out(last_plus - first);
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = first + k;
  return out;
}

/// Samples for a split. Reversed samples are added only for the train split
/// and only when `augment` is set; evaluation never sees them.
inline std::vector<Sample> split_samples(const SeriesDataset& ds, SplitKind kind, std::size_t L, std::size_t H,
                                         bool augment) {
  std::vector<Sample> out;
  for (std::size_t o : window_origins(ds, kind, L, H)) out.push_back({o, Direction::forward});
  if (augment && kind == SplitKind::train) {
    const std::size_t n = out.size();
    for (std::size_t k = 0; k < n; ++k) out.push_back({out[k].origin, Direction::reversed});
  }
  return out;
}

/// Time-reverses an (L+H)×C segment: z'_s = z_{L+H-1-s}.
inline Tensor2 bidirectional_augment(const Tensor2& segment, std::size_t L, std::size_t H) {
  if (segment.rows() != L + H) {
    throw ShapeError("bidirectional_augment: segment has " + std::to_string(segment.rows()) +
                     " rows, expected L+H = " + std::to_string(L + H));
  }
  Tensor2 out(segment.rows(), segment.cols());
  for (std::size_t s = 0; s < segment.rows(); ++s)
    for (std::size_t c = 0; c < segment.cols(); ++c) out(s, c) = segment(segment.rows() - 1 - s, c);
  return out;
}

/// Value at step s of the (possibly reversed) segment starting at `origin`.
inline double sample_value(const SeriesDataset& ds, const Sample& smp, std::size_t L, std::size_t H,
                           std::size_t s, std::size_t c) {
  const std::size_t t = smp.direction == Direction::forward ? smp.origin + s : smp.origin + L + H - 1 - s;
  return ds.values(t, c);
}

inline WindowPair make_window(const SeriesDataset& ds, const Sample& smp, std::size_t L, std::size_t H) {
  if (smp.origin + L + H > ds.length()) throw ConfigError("window exceeds series length");
  WindowPair w{Tensor2(L, ds.channels()), Tensor2(H, ds.channels()), smp.origin, smp.direction};
  for (std::size_t c = 0; c < ds.channels(); ++c) {
    for (std::size_t s = 0; s < L; ++s) w.input(s, c) = sample_value(ds, smp, L, H, s, c);
    for (std::size_t s = 0; s < H; ++s) w.target(s, c) = sample_value(ds, smp, L, H, L + s, c);
  }
  return w;
}

/// Folds samples into series rows: row b·C + c holds channel c of sample b.
inline void fill_batch(const SeriesDataset& ds, std::span<const Sample> batch, std::size_t L, std::size_t H,
                       Tensor2& x, Tensor2& y) {
  const std::size_t C = ds.channels();
  x = Tensor2(batch.size() * C, L);
  y = Tensor2(batch.size() * C, H);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    if (batch[b].origin + L + H > ds.length()) throw ConfigError("window exceeds series length");
    for (std::size_t c = 0; c < C; ++c) {
      double* xr = x.data() + (b * C + c) * L;
      double* yr = y.data() + (b * C + c) * H;
      for (std::size_t s = 0; s < L; ++s) xr[s] = sample_value(ds, batch[b], L, H, s, c);
      for (std::size_t s = 0; s < H; ++s) yr[s] = sample_value(ds, batch[b], L, H, L + s, c);
    }
  }
}

// ---- synthetic signals --------------------------------------------------------------

enum class SyntheticKind { sine, sine_mix, sine_plus_trend, k_sinusoids, saturated_sine, sawtooth };

inline std::string_view to_string(SyntheticKind k) {
  switch (k) {
    case SyntheticKind::sine: return "sine";
    case SyntheticKind::sine_mix: return "sine_mix";
    case SyntheticKind::sine_plus_trend: return "sine_plus_trend";
    case SyntheticKind::k_sinusoids: return "k_sinusoids";
    case SyntheticKind::saturated_sine: return "saturated_sine";
    case SyntheticKind::sawtooth: return "sawtooth";
  }
  return "?";
}

inline SyntheticKind parse_synthetic_kind(std::string_view s) {
  for (SyntheticKind k : {SyntheticKind::sine, SyntheticKind::sine_mix, SyntheticKind::sine_plus_trend,
                          SyntheticKind::k_sinusoids, SyntheticKind::saturated_sine, SyntheticKind::sawtooth}) {
    if (s == to_string(k)) return k;
  }
  throw ConfigError("unknown synthetic kind '" + std::string(s) + "'");
}

/// Random components are drawn as: frequency uniform in [min_freq, max_freq]
/// cycles per step, amplitude uniform in [0.5, 1.5], phase uniform in [0, 2π).
/// Explicit component lists, when non-empty, are used as given.
struct SyntheticSpec {
  SyntheticKind kind = SyntheticKind::sine;
  std::size_t length = 4000;
  std::size_t k = 1;  // component count for k_sinusoids
  std::vector<double> amplitudes;
  std::vector<double> frequencies;
  std::vector<double> phases;
  double slope = 0.0;  // sine_plus_trend defaults to 0.002 when left at 0
  double noise_std = 0.0;
  double min_freq = 1.0 / 96.0;
  double max_freq = 1.0 / 8.0;
  double sharpness = 3.0;       // saturated_sine: tanh(s·sin θ) / tanh(s)
  double rise_fraction = 0.85;  // sawtooth: share of the period spent rising
  std::uint64_t seed = 0;
};

struct SyntheticComponents {
  std::vector<double> amplitudes, frequencies, phases;
  double slope = 0.0;
};

/// Resolves the spec's random draws. Fixed kinds use fixed shapes with a
/// random phase so repeated trials see different signals:
///   sine:             one unit sinusoid with period 24
///   sine_mix:         sin at period 24 plus 0.5·cos at period 10
///   sine_plus_trend:  sine_mix plus slope·t
///   saturated_sine:   unit square-like wave, period uniform in [48, 144]
///   sawtooth:         unit wave rising slowly and falling fast, period 37
inline SyntheticComponents resolve_components(const SyntheticSpec& spec) {
  SyntheticComponents sc;
  Rng rng = Rng(spec.seed).split(0);
  const double two_pi = 2.0 * std::numbers::pi;
  if (!spec.amplitudes.empty() || !spec.frequencies.empty()) {
    if (spec.amplitudes.size() != spec.frequencies.size() ||
        (!spec.phases.empty() && spec.phases.size() != spec.amplitudes.size())) {
      throw ConfigError("synthetic: amplitude/frequency/phase lists differ in length");
    }
    sc.amplitudes = spec.amplitudes;
    sc.frequencies = spec.frequencies;
    sc.phases = spec.phases.empty() ? std::vector<double>(spec.amplitudes.size(), 0.0) : spec.phases;
  } else {
    switch (spec.kind) {
      case SyntheticKind::sine:
        sc.amplitudes = {1.0};
        sc.frequencies = {1.0 / 24.0};
        sc.phases = {rng.uniform(0.0, two_pi)};
        break;
      case SyntheticKind::sine_mix:
      case SyntheticKind::sine_plus_trend:
        sc.amplitudes = {1.0, 0.5};
        sc.frequencies = {1.0 / 24.0, 1.0 / 10.0};
        sc.phases = {rng.uniform(0.0, two_pi), rng.uniform(0.0, two_pi) + std::numbers::pi / 2};
        break;
      case SyntheticKind::saturated_sine:
        sc.amplitudes = {1.0};
        sc.frequencies = {1.0 / rng.uniform(48.0, 144.0)};
        sc.phases = {rng.uniform(0.0, two_pi)};
        break;
      case SyntheticKind::sawtooth:
        sc.amplitudes = {1.0};
        sc.frequencies = {1.0 / 37.0};
        sc.phases = {rng.uniform(0.0, two_pi)};
        break;
      case SyntheticKind::k_sinusoids:
        if (!(spec.min_freq > 0.0 && spec.min_freq <= spec.max_freq)) {
          throw ConfigError("synthetic: need 0 < min_freq <= max_freq");
        }
        for (std::size_t j = 0; j < spec.k; ++j) {
          sc.frequencies.push_back(rng.uniform(spec.min_freq, spec.max_freq));
          sc.amplitudes.push_back(rng.uniform(0.5, 1.5));
          sc.phases.push_back(rng.uniform(0.0, two_pi));
        }
        break;
    }
  }
  sc.slope = spec.slope;
  if (spec.kind == SyntheticKind::sine_plus_trend && spec.slope == 0.0) sc.slope = 0.002;
  return sc;
}

/// One period of the kind's waveform at phase θ, with range [-1, 1].
inline double waveform(const SyntheticSpec& spec, double theta) {
  switch (spec.kind) {
    case SyntheticKind::saturated_sine:
      return std::tanh(spec.sharpness * std::sin(theta)) / std::tanh(spec.sharpness);
    case SyntheticKind::sawtooth: {
      const double two_pi = 2.0 * std::numbers::pi;
      const double u = theta / two_pi - std::floor(theta / two_pi);
      const double r = spec.rise_fraction;
      return u < r ? 2.0 * u / r - 1.0 : 2.0 * (1.0 - u) / (1.0 - r) - 1.0;
    }
    default:
      return std::sin(theta);
  }
}

/// x_t = Σ_j A_j w(2π f_j t + φ_j) + slope·t + noise, where w is the kind's
/// waveform; split 70/10/20 and left unstandardized (mean 0, std 1 recorded).
inline SeriesDataset gen_synthetic(const SyntheticSpec& spec) {
  if (spec.length < 10) throw ConfigError("synthetic: length must be >= 10");
  if (spec.noise_std < 0.0) throw ConfigError("synthetic: noise_std must be >= 0");
  if (!(spec.sharpness > 0.0)) throw ConfigError("synthetic: sharpness must be > 0");
  if (!(spec.rise_fraction > 0.0 && spec.rise_fraction < 1.0)) {
    throw ConfigError("synthetic: rise_fraction must lie in (0, 1)");
  }
  const SyntheticComponents sc = resolve_components(spec);
  Rng noise = Rng(spec.seed).split(1);
  SeriesDataset ds;
  ds.name = "synthetic:" + std::string(to_string(spec.kind));
  ds.columns = {"x"};
  ds.values = Tensor2(spec.length, 1);
  const double two_pi = 2.0 * std::numbers::pi;
  for (std::size_t t = 0; t < spec.length; ++t) {
    const double tt = static_cast<double>(t);
    double v = sc.slope * tt;
    for (std::size_t j = 0; j < sc.amplitudes.size(); ++j) {
      v += sc.amplitudes[j] * waveform(spec, two_pi * sc.frequencies[j] * tt + sc.phases[j]);
    }
    if (spec.noise_std > 0.0) v += noise.normal(0.0, spec.noise_std);
    ds.values(t, 0) = v;
  }
  ds.mean = {0.0};
  ds.std = {1.0};
  ds.splits = make_splits(spec.length, SplitConvention::ratio);
  return ds;
}

// ---- registry -----------------------------------------------------------------------

/// Known benchmark datasets with their tuned defaults (peak learning rate,
/// bidirectional augmentation, lookback).
struct DatasetInfo {
  std::string name;
  SplitConvention convention = SplitConvention::ratio;
  std::size_t channels = 0;  // 0 = taken from the file
  double lr = 1e-3;
  bool bidirectional = false;
  std::size_t lookback = 336;
};

inline std::string lowercase(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

inline const std::vector<DatasetInfo>& dataset_table() {
  static const std::vector<DatasetInfo> t{
      {"weather", SplitConvention::ratio, 21, 1e-3, true, 336},
      {"solar", SplitConvention::ratio, 137, 2e-4, true, 336},
      {"ecl", SplitConvention::ratio, 321, 5e-4, true, 512},
      {"traffic", SplitConvention::ratio, 862, 5e-4, true, 336},
      {"etth1", SplitConvention::hourly_ett, 7, 2e-4, true, 336},
      {"etth2", SplitConvention::hourly_ett, 7, 1e-3, true, 336},
      {"ettm1", SplitConvention::minute_ett, 7, 2e-4, true, 512},
      {"ettm2", SplitConvention::minute_ett, 7, 1e-3, false, 336},
      {"ppg-dalia", SplitConvention::ratio, 15, 5e-4, false, 336},
  };
  return t;
}

/// Looks up a dataset by name (case-insensitive; "electricity" is accepted
/// for ECL). Unknown names need an explicit convention and get the
/// architecture defaults; without one they are a configuration error.
inline DatasetInfo dataset_registry(std::string_view name,
                                    std::optional<SplitConvention> explicit_convention = std::nullopt) {
  std::string key = lowercase(name);
  if (key == "electricity") key = "ecl";
  if (key == "ppg" || key == "ppg_dalia" || key == "ppgdalia") key = "ppg-dalia";
  for (const auto& d : dataset_table()) {
    if (d.name == key) {
      DatasetInfo info = d;
      if (explicit_convention) info.convention = *explicit_convention;
      return info;
    }
  }
  if (!explicit_convention) {
    throw ConfigError("unknown dataset '" + std::string(name) +
                      "': register it or pass an explicit split convention");
  }
  DatasetInfo info;
  info.name = key;
  info.convention = *explicit_convention;
  return info;
}

inline SplitConvention parse_split_convention(std::string_view s) {
  if (s == "hourly_ett" || s == "etth") return SplitConvention::hourly_ett;
  if (s == "minute_ett" || s == "ettm") return SplitConvention::minute_ett;
  if (s == "ratio" || s == "70/10/20") return SplitConvention::ratio;
  throw ConfigError("unknown split convention '" + std::string(s) + "' (hourly_ett|minute_ett|ratio)");
}

}  // namespace decompkan
