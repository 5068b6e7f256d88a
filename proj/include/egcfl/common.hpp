#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace egcfl {

// All numerics run in double precision. The transform-orthonormality and
// round-trip tolerances in the test suite are tighter than float32 can hold.
using real_t = double;

struct InvalidArgument : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct UnsupportedModel : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct InternalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Deterministic RNG. The distributions are implemented here (not via
// std::*_distribution) so that streams are identical across standard
// libraries; reproducibility tests compare outputs bit-for-bit.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  // [0, 1)
  real_t uniform() {
    return static_cast<real_t>(next_u64() >> 11) * 0x1.0p-53;
  }

  real_t uniform(real_t lo, real_t hi) { return lo + (hi - lo) * uniform(); }

  // [0, n)
  int uniform_int(int n) {
    if (n <= 0) throw InvalidArgument("Rng::uniform_int: n must be positive");
    const uint64_t span = static_cast<uint64_t>(n);
    const uint64_t limit = UINT64_MAX - UINT64_MAX % span;
    uint64_t x = next_u64();
    while (x >= limit) x = next_u64();
    return static_cast<int>(x % span);
  }

  real_t normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    // Box-Muller on open-interval uniforms.
    real_t u = 0.0;
    while (u <= 0.0) u = uniform();
    const real_t v = uniform();
    const real_t r = std::sqrt(-2.0 * std::log(u));
    const real_t a = 6.283185307179586476925286766559 * v;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  void fill_uniform(real_t* p, size_t n, real_t lo, real_t hi) {
    for (size_t i = 0; i < n; ++i) p[i] = uniform(lo, hi);
  }

  void fill_normal(real_t* p, size_t n, real_t mean, real_t stddev) {
    for (size_t i = 0; i < n; ++i) p[i] = mean + stddev * normal();
  }

  // Derive an independent stream for a sub-task without disturbing this one.
  static uint64_t substream(uint64_t seed, uint64_t stream) {
    // SplitMix64 over the combined value.
    uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

 private:
  std::mt19937_64 gen_;
  bool has_spare_ = false;
  real_t spare_ = 0.0;
};

// FNV-1a, used for dataset/checkpoint integrity checks.
inline uint64_t fnv1a(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline real_t clamp01(real_t v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); }

}  // namespace egcfl
