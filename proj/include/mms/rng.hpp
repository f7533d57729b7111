// SPDX-FileCopyrightText: 2026 mms contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Deterministic randomness for the whole library.
//
// Generator: xoshiro256** (Blackman & Vigna, 2018). State is seeded by
// expanding a single u64 through SplitMix64, the seeding procedure the
// xoshiro authors recommend. Every random decision in the library flows
// through mms::Rng; nothing uses <random> distributions, so streams are
// reproducible across standard libraries and platforms.
//
// Stream mapping: a component that needs its own stream derives a sub-seed
// with sub_seed(parent_seed, tag) (or the two/three tag overloads) and
// constructs a fresh Rng from it. Tags are small documented integers, e.g.
// the mask generator uses tag 1/2/3 for the random/block/span branches and
// the trainer derives per-sample mask seeds as
// sub_seed(cfg.seed, kStreamMask, step, sample). Since SplitMix64 is a
// bijective mixer, distinct (seed, tags...) tuples give decorrelated
// streams and the mapping is stable forever.

#include <cstdint>
#include <cmath>
#include <vector>

#include "mms/errors.hpp"

namespace mms {

struct SplitMix64 {
  std::uint64_t state;

  explicit SplitMix64(std::uint64_t seed) : state(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }
};

// Well-known stream tags. Components may use additional local tags; these
// are the ones shared across modules.
inline constexpr std::uint64_t kStreamInit = 11;     // parameter init
inline constexpr std::uint64_t kStreamMask = 12;     // per-step mask seeds
inline constexpr std::uint64_t kStreamShuffle = 13;  // epoch permutations
inline constexpr std::uint64_t kStreamSynth = 14;    // dataset synthesis
inline constexpr std::uint64_t kStreamEval = 15;     // eval-set masks

inline std::uint64_t sub_seed(std::uint64_t seed, std::uint64_t tag) {
  SplitMix64 sm(seed ^ (0x9E3779B97F4A7C15ull * (tag + 1)));
  return sm.next();
}

inline std::uint64_t sub_seed(std::uint64_t seed, std::uint64_t a,
                              std::uint64_t b) {
  return sub_seed(sub_seed(seed, a), b);
}

inline std::uint64_t sub_seed(std::uint64_t seed, std::uint64_t a,
                              std::uint64_t b, std::uint64_t c) {
  return sub_seed(sub_seed(seed, a, b), c);
}

// FNV-1a over raw bytes; chainable for streaming (pass the previous hash
// as h). Used for content fingerprints in manifests and reports.
inline std::uint64_t fnv1a64(const void* data, std::size_t n,
                             std::uint64_t h = 14695981039346656037ull) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) {
    SplitMix64 sm(seed);
    for (auto& w : s_) w = sm.next();
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Uniform double in [0, 1), 53 random bits.
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) {
    if (!(lo <= hi)) throw RangeError("uniform: lo > hi");
    return lo + (hi - lo) * uniform();
  }

  // Unbiased integer in [0, n) by rejection.
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw RangeError("below: n must be positive");
    const std::uint64_t threshold = (0 - n) % n;  // 2^64 mod n
    for (;;) {
      const std::uint64_t r = next_u64();
      if (r >= threshold) return r % n;
    }
  }

  // Inclusive integer range.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    if (lo > hi) throw RangeError("uniform_int: lo > hi");
    return lo + std::int64_t(below(std::uint64_t(hi - lo) + 1));
  }

  // Box-Muller; the second value of each pair is cached, so gaussian()
  // advances the u64 stream every other call.
  double gaussian(double mean, double stddev) {
    if (has_spare_) {
      has_spare_ = false;
      return mean + stddev * spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double k = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * k;
    has_spare_ = true;
    return mean + stddev * u * k;
  }

  // Gaussian restricted to +-clip standard deviations, by rejection.
  double trunc_gaussian(double mean, double stddev, double clip = 2.0) {
    if (!(clip > 0)) throw RangeError("trunc_gaussian: clip must be > 0");
    for (;;) {
      const double z = gaussian(0.0, 1.0);
      if (z >= -clip && z <= clip) return mean + stddev * z;
    }
  }

  // Fisher-Yates shuffle of [0, n).
  template <class Int>
  void shuffle(std::vector<Int>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = std::size_t(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }

  std::uint64_t s_[4];
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace mms
