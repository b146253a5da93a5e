#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>
#include <vector>

#include "olens/error.hpp"

namespace olens {

// Counter-based generator in the splitmix64 family. Draw i is a pure function
// of (seed, i), so the same (seed, counter) pair yields the same value on any
// platform and in any evaluation order. Streams fork by label, which keeps
// dropout masks, MLM masks and shuffles independent of each other.
class RngStream {
 public:
  RngStream() = default;
  explicit RngStream(std::uint64_t seed, std::uint64_t counter = 0)
      : seed_(seed), counter_(counter) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

  static std::uint64_t mix(std::uint64_t z) {
    z ^= z >> 30;
    z *= 0xBF58476D1CE4E5B9ULL;
    z ^= z >> 27;
    z *= 0x94D049BB133111EBULL;
    z ^= z >> 31;
    return z;
  }

  std::uint64_t at(std::uint64_t counter) const {
    return mix(seed_ + (counter + 1) * 0x9E3779B97F4A7C15ULL);
  }

  std::uint64_t next_u64() { return at(counter_++); }

  // Uniform in [0, 1).
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform in (0, 1]; safe as a log() argument.
  double next_open() { return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53; }

  // Box-Muller; consumes exactly two draws per call.
  double next_normal() {
    double u1 = next_open();
    double u2 = next_double();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  // Normal(0, stddev) rejected outside +/- clip_sigmas standard deviations.
  double next_trunc_normal(double stddev, double clip_sigmas = 2.0) {
    double z = next_normal();
    while (std::abs(z) > clip_sigmas) z = next_normal();
    return z * stddev;
  }

  // Uniform integer in [0, n); Lemire reduction keeps it branch-free.
  std::uint64_t next_below(std::uint64_t n) {
    if (n == 0) raise(ErrorKind::Contract, "next_below: n must be positive");
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  // Derived stream whose seed depends on this stream's seed and the label only.
  RngStream fork(std::string_view label) const {
    std::uint64_t h = 1469598103934665603ULL;
    for (char c : label) {
      h ^= static_cast<unsigned char>(c);
      h *= 1099511628211ULL;
    }
    return RngStream(mix(seed_ ^ h));
  }

 private:
  std::uint64_t seed_ = 0;
  std::uint64_t counter_ = 0;
};

// Deterministic Fisher-Yates permutation of 0..n-1.
inline std::vector<std::size_t> shuffled_indices(std::size_t n, RngStream rng) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  for (std::size_t i = n; i > 1; --i) {
    std::size_t j = static_cast<std::size_t>(rng.next_below(i));
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

}  // namespace olens
