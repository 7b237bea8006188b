// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace vsd {

// Deterministic pseudo-random stream. All distribution mappings are
// implemented here rather than with std::*_distribution so that the produced
// sequence is pinned by this code, not by the standard library vendor.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t next_u64() { return eng_(); }

  // Uniform in [0,1) with 53 random bits.
  double uniform() {
    return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + uniform() * (hi - lo); }

  // Inclusive integer range. Unbiased via rejection on the top of the range.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    if (span == 0) return static_cast<std::int64_t>(eng_());  // full 64-bit range
    const std::uint64_t limit = std::uint64_t(-1) - std::uint64_t(-1) % span;
    std::uint64_t r;
    do {
      r = eng_();
    } while (r >= limit);
    return lo + static_cast<std::int64_t>(r % span);
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Box-Muller without spare caching: every call consumes exactly two
  // uniforms, which keeps draw counts (and thus downstream streams) stable.
  double normal() {
    const double u1 = 1.0 - uniform();  // (0,1], keeps log() finite
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

 private:
  std::mt19937_64 eng_;
};

// FNV-1a style mixing for deriving named substreams from a base seed.
// derive_seed(seed, "crop", 3) and derive_seed(seed, "augs", 3) are
// independent streams for the same logical object.
std::uint64_t mix_seed(std::uint64_t h, std::uint64_t v);
std::uint64_t mix_seed(std::uint64_t h, std::string_view s);

inline std::uint64_t derive_seed(std::uint64_t base) { return mix_seed(base, 0x9e3779b97f4a7c15ULL); }

template <typename Head, typename... Tail>
std::uint64_t derive_seed(std::uint64_t base, Head&& head, Tail&&... tail) {
  return derive_seed(mix_seed(base, std::forward<Head>(head)), std::forward<Tail>(tail)...);
}

}  // namespace vsd
