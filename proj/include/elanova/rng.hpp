#pragma once
// Deterministic keyed RNG streams. Every stochastic stage (data generation,
// missingness, wild draws, resampled missingness) pulls from its own stream
// keyed by (seed, replicate, stage, unit), so results are bit-identical for a
// fixed seed regardless of thread count or platform. Distributions are
// hand-rolled because std::normal_distribution output is implementation-defined.

#include <cstdint>
#include <cmath>

namespace elanova {

enum class rng_stage : std::uint64_t {
  generate = 0x9e01,
  missingness = 0x9e02,
  wild = 0x9e03,
  boot_missing = 0x9e04,
  misc = 0x9e05,
};

inline std::uint64_t splitmix64(std::uint64_t& x) {
  x += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// xoshiro256++ engine seeded through splitmix64 over the mixed key.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0,
            std::uint64_t c = 0) {
    std::uint64_t key = seed;
    key = splitmix64(key) ^ (a * 0xd1342543de82ef95ULL);
    key = splitmix64(key) ^ (b * 0xaf251af3b0f025b5ULL);
    key = splitmix64(key) ^ (c * 0x9e3779b97f4a7c15ULL);
    for (auto& w : s_) w = splitmix64(key);
    have_normal_ = false;
  }
  RngStream(std::uint64_t seed, rng_stage st, std::uint64_t rep,
            std::uint64_t unit = 0)
      : RngStream(seed, static_cast<std::uint64_t>(st), rep, unit) {}

  std::uint64_t next_u64() {
    const std::uint64_t r = rotl(s_[0] + s_[3], 23) + s_[0];
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return r;
  }

  // uniform on (0,1): 53 random bits, never exactly 0 or 1
  double uniform() {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Marsaglia polar method; caches the paired deviate
  double normal() {
    if (have_normal_) {
      have_normal_ = false;
      return cached_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double f = std::sqrt(-2.0 * std::log(s) / s);
    cached_ = v * f;
    have_normal_ = true;
    return u * f;
  }

  double normal(double mean, double sd) { return mean + sd * normal(); }

  bool bernoulli(double p) { return uniform() < p; }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }
  std::uint64_t s_[4];
  double cached_ = 0;
  bool have_normal_;
};

}  // namespace elanova
