#pragma once

// Seeded draws with a fully specified output sequence.
//
// std::mt19937_64 is bit-exact across standard libraries, but the standard
// distributions and std::shuffle are not, so golden outputs built on them
// would change between toolchains. Everything here consumes raw engine words.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <utility>

namespace smm::rng {

using Engine = std::mt19937_64;

/// Uniform integer in [0, bound) by rejection on the top of the 64-bit range.
inline std::uint64_t uniform_index(Engine& engine, std::uint64_t bound) {
  if (bound <= 1) return 0;
  const std::uint64_t limit = UINT64_MAX - (UINT64_MAX % bound);
  std::uint64_t word = engine();
  while (word >= limit) word = engine();
  return word % bound;
}

/// Uniform double in [0, 1) with 53 random bits.
inline double uniform01(Engine& engine) {
  return static_cast<double>(engine() >> 11) * 0x1.0p-53;
}

/// Standard normal via Box-Muller; consumes two words per draw.
inline double standard_normal(Engine& engine) {
  const double u1 = 1.0 - uniform01(engine);  // (0, 1]
  const double u2 = uniform01(engine);
  return std::sqrt(-2.0 * std::log(u1)) *
         std::cos(2.0 * std::numbers::pi * u2);
}

/// Fisher-Yates, drawing j in [0, i] for i = n-1 .. 1.
template <typename T>
void shuffle(std::span<T> items, Engine& engine) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(uniform_index(engine, i));
    using std::swap;
    swap(items[i - 1], items[j]);
  }
}

}  // namespace smm::rng
