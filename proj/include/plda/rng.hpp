#pragma once

#include <cstdint>
#include <random>

#include "plda/tensor.hpp"

namespace plda {

/// splitmix64 — used to derive independent stream seeds from (seed, tag...)
/// so that sample generation, shuffling and dropout stay decoupled.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t seed_for(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0,
                              std::uint64_t c = 0) {
  return mix64(mix64(mix64(seed ^ 0x5851f42d4c957f2dULL) + a) + mix64(b) + c);
}

/// Deterministic RNG: distributions are implemented here rather than via
/// std::*_distribution, whose output is implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t bits() { return eng_(); }

  /// Uniform in [0,1).
  real uniform() { return static_cast<real>(bits() >> 11) * 0x1.0p-53; }

  real uniform(real lo, real hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [lo, hi] inclusive.
  int uniform_int(int lo, int hi) {
    return lo + static_cast<int>(bits() % static_cast<std::uint64_t>(hi - lo + 1));
  }

  /// Standard normal via Box-Muller (fresh pair each call, no cache).
  real normal() {
    real u1 = uniform();
    while (u1 <= 0) u1 = uniform();
    real u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  real normal(real mean, real stddev) { return mean + stddev * normal(); }

  template <typename T>
  void shuffle(std::vector<T>& xs) {
    for (size_t i = xs.size(); i > 1; --i) {
      size_t j = bits() % i;
      std::swap(xs[i - 1], xs[j]);
    }
  }

 private:
  std::mt19937_64 eng_;
};

}  // namespace plda
