#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "srst/errors.hpp"

namespace srst {

// Deterministic random stream. All randomness in the library flows through
// explicitly seeded Rng instances; the int/real helpers are hand-rolled so
// draws do not depend on standard-library distribution internals.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform integer in [0, n). n must be positive.
  std::int64_t uniform_int(std::int64_t n) {
    if (n <= 0) throw UsageError("uniform_int: n must be positive");
    // Rejection sampling removes modulo bias.
    const std::uint64_t un = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % un;
    std::uint64_t x = engine_();
    while (x >= limit) x = engine_();
    return static_cast<std::int64_t>(x % un);
  }

  // Uniform real in [a, b).
  double uniform_real(double a, double b) {
    const double u = static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    return a + (b - a) * u;
  }

  // Standard normal via Box-Muller (one value per call, no cache, so the
  // draw sequence stays trivially reproducible).
  double normal() {
    double u1 = uniform_real(0.0, 1.0);
    while (u1 <= 0.0) u1 = uniform_real(0.0, 1.0);
    const double u2 = uniform_real(0.0, 1.0);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
  }

  // Child stream whose seed mixes this stream's seed with a label, so
  // per-document / per-epoch streams are independent yet reproducible.
  Rng derive(std::uint64_t label) const {
    return Rng(mix(seed_of(engine_), label));
  }

  static std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
    // splitmix64 finalizer over the combined value.
    std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

 private:
  // mt19937_64 cannot report its seed; keep a copy at construction.
  struct SeededEngine {
    explicit SeededEngine(std::uint64_t s) : seed(s), mt(s) {}
    std::uint64_t operator()() { return mt(); }
    std::uint64_t seed;
    std::mt19937_64 mt;
  };
  static std::uint64_t seed_of(const SeededEngine& e) { return e.seed; }

  SeededEngine engine_;
};

}  // namespace srst
