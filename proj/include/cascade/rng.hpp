#pragma once

#include <cmath>
#include <cstdint>

namespace cascade {

// Counter-based random generator. Every draw is a pure function of
// (key, counter), so independent streams keyed by (seed, step, index)
// produce identical values regardless of evaluation order or thread
// count. std:: distributions are avoided on purpose: their output is
// implementation-defined and would break byte-reproducible datasets.
namespace rngmix {

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline uint64_t mix2(uint64_t a, uint64_t b) {
  return splitmix64(splitmix64(a) ^ (b + 0x9e3779b97f4a7c15ULL));
}

inline uint64_t mix3(uint64_t a, uint64_t b, uint64_t c) {
  return splitmix64(mix2(a, b) ^ splitmix64(c + 0x2545f4914f6cdd1dULL));
}

}  // namespace rngmix

// Uniform in [0, 1) with 53-bit resolution.
inline double counter_uniform(uint64_t key, uint64_t counter) {
  return static_cast<double>(rngmix::mix2(key, counter) >> 11) * 0x1.0p-53;
}

// Standard normal via Box-Muller on two derived uniforms.
inline double counter_normal(uint64_t key, uint64_t counter) {
  const double u1 = static_cast<double>(rngmix::mix3(key, counter, 0x51ULL) >> 11) * 0x1.0p-53;
  const double u2 = static_cast<double>(rngmix::mix3(key, counter, 0x52ULL) >> 11) * 0x1.0p-53;
  const double r = std::sqrt(-2.0 * std::log(1.0 - u1));
  return r * std::cos(6.283185307179586476925286766559 * u2);
}

// Sequential convenience wrapper around the counter generator.
class Rng {
 public:
  explicit Rng(uint64_t seed) : key_(rngmix::splitmix64(seed)) {}
  Rng(uint64_t seed, uint64_t stream) : key_(rngmix::mix2(seed, stream)) {}

  uint64_t seed_key() const { return key_; }

  uint64_t next_u64() { return rngmix::mix2(key_, counter_++); }

  double uniform() { return counter_uniform(key_, counter_++); }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  double normal() { return counter_normal(key_, counter_++); }

  // Uniform integer in [0, n).
  uint64_t below(uint64_t n) { return n ? next_u64() % n : 0; }

  // Derive an independent stream without disturbing this one.
  Rng split(uint64_t stream) const { return Rng(key_, stream); }

 private:
  uint64_t key_;
  uint64_t counter_ = 0;
};

}  // namespace cascade
