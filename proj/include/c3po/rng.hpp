#pragma once

#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "c3po/types.hpp"

namespace c3po {

/// splitmix64 finalizer; used to derive decorrelated sub-seeds.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Combine a base seed with stream coordinates (step, group, member, ...).
inline std::uint64_t sub_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0,
                              std::uint64_t c = 0) {
  std::uint64_t s = mix64(base ^ mix64(a));
  s = mix64(s ^ mix64(b + 0x5851f42d4c957f2dULL));
  return mix64(s ^ mix64(c + 0x14057b7ef767814fULL));
}

// Deterministic RNG built on mt19937_64. Sampling primitives are implemented
// here rather than via <random> distributions, whose output is
// implementation-defined; everything drawn through this class is reproducible
// from the seed alone, and the engine state serializes as text.
class Rng {
 public:
  Rng() : Rng(0) {}
  explicit Rng(std::uint64_t seed) : engine_(mix64(seed)) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform double in [0, 1) with 53 random bits.
  double next_double() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, n). Rejection sampling, no modulo bias.
  std::uint64_t next_below(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("Rng::next_below: n must be positive");
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  /// Standard normal via Box-Muller (no cached spare; one draw per call pair).
  double next_gauss() {
    double u1 = next_double();
    while (u1 <= 0.0) u1 = next_double();
    const double u2 = next_double();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  /// Index sampled from unnormalized non-negative weights via CDF walk.
  int categorical(const Vec& weights) {
    const double total = weights.sum();
    if (!(total > 0.0)) throw std::invalid_argument("Rng::categorical: weights must have positive mass");
    const double u = next_double() * total;
    double cum = 0.0;
    for (Eigen::Index i = 0; i < weights.size(); ++i) {
      cum += weights(i);
      if (u < cum) return static_cast<int>(i);
    }
    return static_cast<int>(weights.size() - 1);  // u landed on accumulated rounding slack
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(next_below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  std::string serialize() const {
    std::ostringstream os;
    os << engine_;
    return os.str();
  }

  static Rng deserialize(const std::string& text) {
    Rng r;
    std::istringstream is(text);
    is >> r.engine_;
    if (is.fail()) throw std::runtime_error("Rng::deserialize: malformed engine state");
    return r;
  }

  bool operator==(const Rng& other) const { return engine_ == other.engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace c3po
