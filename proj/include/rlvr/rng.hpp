#pragma once

#include <cmath>
#include <cstdint>

namespace rlvr {

// Counter-style RNG built on splitmix64. Streams are derived by folding
// integer keys (seed, step, slot, ...) into the state, so any worker can
// reconstruct its stream from scratch; results never depend on thread
// scheduling.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(mix_(seed ^ 0x9e3779b97f4a7c15ull)) {}

  // Derive an independent stream keyed by `key`.
  Rng fork(uint64_t key) const { return Rng(mix_(state_ ^ mix_(key + 0x517cc1b727220a95ull))); }

  uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ull;
    return mix_(state_);
  }

  // Uniform in [0, 1) with 53-bit resolution.
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n).
  uint64_t below(uint64_t n) { return n == 0 ? 0 : next_u64() % n; }

  // Standard normal via Box-Muller (no spare caching; streams stay stateless
  // apart from the counter).
  double normal() {
    double u = 1.0 - uniform();  // (0, 1]
    double v = uniform();
    return std::sqrt(-2.0 * std::log(u)) * std::cos(6.283185307179586 * v);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Index into a non-negative weight vector proportional to weight.
  template <typename Vec>
  size_t pick_weighted(const Vec& weights) {
    double total = 0.0;
    for (double w : weights) total += w;
    double r = uniform() * total;
    double c = 0.0;
    for (size_t i = 0; i + 1 < weights.size(); ++i) {
      c += weights[i];
      if (r < c) return i;
    }
    return weights.empty() ? 0 : weights.size() - 1;
  }

 private:
  static uint64_t mix_(uint64_t z) {
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  uint64_t state_;
};

}  // namespace rlvr
