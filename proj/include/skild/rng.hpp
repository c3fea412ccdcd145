#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace skild {

// Deterministic seeded random stream. All conversions from raw engine output
// to doubles are hand-rolled so that streams are bit-identical across
// platforms and standard libraries.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1), 53-bit mantissa.
  double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Uniform integer in [0, n), n > 0. Rejection-free modulo bias is negligible
  // for the n used here but we reject anyway to keep draws exact.
  uint64_t uniform_int(uint64_t n) {
    const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t x = engine_();
    while (x >= limit) x = engine_();
    return x % n;
  }

  // Standard normal via Box-Muller with a cached spare.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform01();
    double u2 = uniform01();
    while (u1 <= 0.0) u1 = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double t = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(t);
    has_spare_ = true;
    return r * std::cos(t);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline uint64_t fnv1a64(std::string_view s) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Seed splitting rule: every random stream in the project derives from one
// master u64 seed through derive_seed(master, label, index). Labels are fixed
// strings per purpose ("datagen.traj", "skills.train", ...), the index
// distinguishes parallel streams (trajectory number, RL seed, ...).
inline uint64_t derive_seed(uint64_t master, std::string_view label, uint64_t index = 0) {
  return splitmix64(splitmix64(master ^ fnv1a64(label)) + index);
}

inline Rng derive_rng(uint64_t master, std::string_view label, uint64_t index = 0) {
  return Rng(derive_seed(master, label, index));
}

}  // namespace skild
