#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <utility>
#include <vector>

#include "decompkan/error.hpp"
#include "decompkan/tensor.hpp"

namespace decompkan {

/// SplitMix64 step (Steele, Lea & Flood). Used for seeding and stream splitting.
inline std::uint64_t splitmix64(std::uint64_t& state) noexcept {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// xoshiro256** (Blackman & Vigna) seeded through SplitMix64.
///
/// The stream is fully specified by integer arithmetic, so a seed yields the
/// same sequence on every platform. Uniform doubles take the top 53 bits;
/// normals use the Box-Muller transform (one pair per two uniforms, the
/// second value is cached).
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed) {
    std::uint64_t sm = seed;
    for (auto& s : s_) s = splitmix64(sm);
  }

  std::uint64_t seed() const noexcept { return seed_; }

  /// Child stream `i`. Children are keyed by (parent seed, i) only, so the
  /// result does not depend on how much of the parent stream was consumed.
  Rng split(std::uint64_t i) const {
    std::uint64_t sm = seed_ ^ 0x6A09E667F3BCC909ULL;
    std::uint64_t a = splitmix64(sm);
    sm = a ^ (i * 0xD1B54A32D192ED03ULL + 0x9E3779B97F4A7C15ULL);
    return Rng(splitmix64(sm));
  }

  std::uint64_t next_u64() noexcept {
    const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  /// Uniform in [0, 1).
  double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) {
    if (!(lo < hi)) throw ConfigError("uniform: require lo < hi");
    return lo + (hi - lo) * uniform();
  }

  /// Unbiased integer in [0, n) by rejection.
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw ConfigError("below: n must be positive");
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t v;
    do {
      v = next_u64();
    } while (v >= limit);
    return v % n;
  }

  double normal() noexcept {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  double normal(double mean, double std) {
    if (!(std >= 0.0)) throw ConfigError("normal: std must be >= 0");
    return mean + std * normal();
  }

  /// Fisher-Yates, defined here rather than via std::shuffle so the
  /// permutation is identical across standard library implementations.
  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) noexcept { return (x << k) | (x >> (64 - k)); }

  std::uint64_t seed_;
  std::uint64_t s_[4];
  double spare_ = 0.0;
  bool has_spare_ = false;
};

inline Tensor2 rand_uniform(Rng& rng, double lo, double hi, std::size_t rows, std::size_t cols) {
  if (!(lo < hi)) throw ConfigError("rand_uniform: require lo < hi");
  Tensor2 t(rows, cols);
  for (auto& v : t.values()) v = lo + (hi - lo) * rng.uniform();
  return t;
}

inline Tensor2 rand_normal(Rng& rng, double mean, double std, std::size_t rows, std::size_t cols) {
  if (!(std >= 0.0)) throw ConfigError("rand_normal: std must be >= 0");
  Tensor2 t(rows, cols);
  for (auto& v : t.values()) v = mean + std * rng.normal();
  return t;
}

}  // namespace decompkan
