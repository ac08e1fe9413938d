#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>

namespace qgface {

// Deterministic, platform-independent RNG (xoshiro256++ seeded via
// splitmix64). std:: distributions are implementation-defined, so all
// sampling helpers are spelled out here; every seeded run reproduces
// bit-for-bit.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) { reseed(seed); }

  void reseed(uint64_t seed) {
    uint64_t x = seed;
    for (auto& si : s_) si = splitmix64(x);
  }

  uint64_t u64() {
    const uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    const uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Uniform in [0,1).
  double uniform() { return static_cast<double>(u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [lo, hi] inclusive.
  int64_t uniform_int(int64_t lo, int64_t hi) {
    const uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    return lo + static_cast<int64_t>(u64() % span);
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Standard normal via Box-Muller (no cached spare, keeps state simple).
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Child stream that will not correlate with further draws from this one.
  Rng fork() { return Rng(u64() ^ 0x9e3779b97f4a7c15ULL); }

  static uint64_t splitmix64(uint64_t& x) {
    x += 0x9e3779b97f4a7c15ULL;
    uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

 private:
  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  uint64_t s_[4];
};

// Stateless seed derivation: the same (root, tags...) always names the same
// stream, so resumed runs and reordered batches reproduce exactly.
inline uint64_t derive_seed(uint64_t root, std::initializer_list<uint64_t> tags) {
  uint64_t x = root;
  uint64_t h = Rng::splitmix64(x);
  for (uint64_t t : tags) {
    x = h ^ (t + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2));
    h = Rng::splitmix64(x);
  }
  return h;
}

}  // namespace qgface
