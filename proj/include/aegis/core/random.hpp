#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace aegis {

using Rng = std::mt19937_64;

// Seeds are split hierarchically: every stage derives its own stream from the
// parent seed and a stream key, so no global generator exists.
std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t stream);
std::uint64_t derive_seed(std::uint64_t parent, std::string_view tag);

inline Rng make_rng(std::uint64_t seed) { return Rng(seed); }

inline double uniform(Rng& rng, double lo, double hi) {
  if (!(lo < hi)) return lo;
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline double standard_normal(Rng& rng) {
  return std::normal_distribution<double>(0.0, 1.0)(rng);
}

inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

}  // namespace aegis
