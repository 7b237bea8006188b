// SPDX-License-Identifier: Apache-2.0
#include "vsd/rng.hpp"

namespace vsd {

namespace {
constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

std::uint64_t avalanche(std::uint64_t x) {
  // splitmix64 finalizer; spreads low-entropy inputs over the whole word.
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ULL;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebULL;
  x ^= x >> 31;
  return x;
}
}  // namespace

std::uint64_t mix_seed(std::uint64_t h, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) {
    h = (h ^ ((v >> (8 * i)) & 0xff)) * kFnvPrime;
  }
  return avalanche(h);
}

std::uint64_t mix_seed(std::uint64_t h, std::string_view s) {
  for (unsigned char c : s) {
    h = (h ^ c) * kFnvPrime;
  }
  return avalanche(h);
}

}  // namespace vsd
