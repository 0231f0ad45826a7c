#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace agddad {

// Deterministic, portable random generator (xoshiro256++ seeded via
// splitmix64). We avoid std::normal_distribution on purpose: its output is
// implementation defined, and run manifests promise bit-identical corpora
// for a given seed.
class Rng {
 public:
  explicit Rng(uint64_t seed) {
    uint64_t x = seed;
    for (auto& si : s_) si = splitmix64(x);
    have_cached_ = false;
    cached_ = 0.0;
  }

  uint64_t next_u64() {
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

  // Uniform double in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Integer in [0, n), n > 0.
  uint64_t below(uint64_t n) { return next_u64() % n; }

  // Standard normal via Marsaglia polar method (log/sqrt only, portable).
  double normal() {
    if (have_cached_) {
      have_cached_ = false;
      return cached_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double m = std::sqrt(-2.0 * std::log(s) / s);
    cached_ = v * m;
    have_cached_ = true;
    return u * m;
  }

  // Independent child stream identified by a tag; used so that per-image or
  // per-stage work can run in any order without changing results.
  Rng child(std::string_view tag) const {
    uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
    for (char ch : tag) {
      h ^= static_cast<unsigned char>(ch);
      h *= 0x100000001b3ULL;
    }
    uint64_t x = s_[0] ^ rotl(s_[2], 31) ^ h;
    return Rng(splitmix64(x));
  }

  Rng child(uint64_t n) const {
    uint64_t x = s_[0] ^ rotl(s_[2], 31) ^ (n * 0x9e3779b97f4a7c15ULL + 0x632be59bd9b4e019ULL);
    return Rng(splitmix64(x));
  }

 private:
  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  static uint64_t splitmix64(uint64_t& x) {
    x += 0x9e3779b97f4a7c15ULL;
    uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  uint64_t s_[4];
  bool have_cached_;
  double cached_;
};

}  // namespace agddad
