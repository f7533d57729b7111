// SPDX-FileCopyrightText: 2026 mms contributors
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdint>
#include <set>
#include <vector>

#include "mms/rng.hpp"

using mms::Rng;
using mms::sub_seed;

// Values frozen from an independent implementation of SplitMix64 seeding +
// xoshiro256** stepping, typed straight from the published algorithms.
TEST_CASE("xoshiro256** matches the reference stream", "[rng]") {
  {
    Rng r(42);
    REQUIRE(r.next_u64() == 1546998764402558742ULL);
    REQUIRE(r.next_u64() == 6990951692964543102ULL);
    REQUIRE(r.next_u64() == 12544586762248559009ULL);
    REQUIRE(r.next_u64() == 17057574109182124193ULL);
    REQUIRE(r.next_u64() == 18295552978065317476ULL);
    REQUIRE(r.next_u64() == 14199186830065750584ULL);
  }
  {
    Rng r(0);
    REQUIRE(r.next_u64() == 11091344671253066420ULL);
    REQUIRE(r.next_u64() == 13793997310169335082ULL);
    REQUIRE(r.next_u64() == 1900383378846508768ULL);
  }
}

TEST_CASE("same seed same stream, different seed different stream", "[rng]") {
  Rng a(123), b(123), c(124);
  bool all_equal = true, any_diff = false;
  for (int i = 0; i < 64; ++i) {
    const auto x = a.next_u64(), y = b.next_u64(), z = c.next_u64();
    all_equal = all_equal && (x == y);
    any_diff = any_diff || (x != z);
  }
  REQUIRE(all_equal);
  REQUIRE(any_diff);
}

TEST_CASE("uniform stays in [0,1) and fills the range", "[rng]") {
  Rng r(7);
  double lo = 1.0, hi = 0.0;
  for (int i = 0; i < 100000; ++i) {
    const double u = r.uniform();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    lo = std::min(lo, u);
    hi = std::max(hi, u);
  }
  REQUIRE(lo < 0.001);
  REQUIRE(hi > 0.999);
}

TEST_CASE("below is in range, unbiased enough, and hits every bucket", "[rng]") {
  Rng r(99);
  const int n = 10, draws = 100000;
  std::vector<int> counts(n, 0);
  for (int i = 0; i < draws; ++i) {
    const auto v = r.below(n);
    REQUIRE(v < std::uint64_t(n));
    ++counts[std::size_t(v)];
  }
  // chi-square against uniform; 99.9% critical value for 9 dof is 27.88
  const double expect = double(draws) / n;
  double chi2 = 0;
  for (int k : counts) chi2 += (k - expect) * (k - expect) / expect;
  REQUIRE(chi2 < 27.88);
  REQUIRE_THROWS_AS(r.below(0), mms::RangeError);
}

TEST_CASE("uniform_int covers both endpoints", "[rng]") {
  Rng r(5);
  std::set<std::int64_t> seen;
  for (int i = 0; i < 1000; ++i) {
    const auto v = r.uniform_int(-3, 3);
    REQUIRE(v >= -3);
    REQUIRE(v <= 3);
    seen.insert(v);
  }
  REQUIRE(seen.count(-3) == 1);
  REQUIRE(seen.count(3) == 1);
  REQUIRE_THROWS_AS(r.uniform_int(2, 1), mms::RangeError);
}

TEST_CASE("gaussian moments come out right", "[rng]") {
  Rng r(2024);
  const int n = 200000;
  double sum = 0, sq = 0;
  for (int i = 0; i < n; ++i) {
    const double g = r.gaussian(1.5, 2.0);
    sum += g;
    sq += g * g;
  }
  const double mean = sum / n;
  const double var = sq / n - mean * mean;
  REQUIRE(std::abs(mean - 1.5) < 0.02);
  REQUIRE(std::abs(std::sqrt(var) - 2.0) < 0.02);
}

TEST_CASE("trunc_gaussian respects the clip", "[rng]") {
  Rng r(31337);
  for (int i = 0; i < 50000; ++i) {
    const double g = r.trunc_gaussian(0.0, 0.02, 2.0);
    REQUIRE(g >= -0.04);
    REQUIRE(g <= 0.04);
  }
  REQUIRE_THROWS_AS(r.trunc_gaussian(0, 1, 0.0), mms::RangeError);
}

TEST_CASE("sub_seed is stable and tag-sensitive", "[rng]") {
  // frozen from the same reference program as the stream values
  REQUIRE(sub_seed(7, 1) == 11307387092600937729ULL);
  REQUIRE(sub_seed(7, 1) != sub_seed(7, 2));
  REQUIRE(sub_seed(7, 1) != sub_seed(8, 1));
  REQUIRE(sub_seed(7, 1, 2) != sub_seed(7, 2, 1));
  REQUIRE(sub_seed(1, 2, 3, 4) == sub_seed(1, 2, 3, 4));
}

TEST_CASE("shuffle yields a permutation and is seed-deterministic", "[rng]") {
  std::vector<int> v(100);
  for (int i = 0; i < 100; ++i) v[std::size_t(i)] = i;
  std::vector<int> w = v;
  Rng a(11), b(11);
  a.shuffle(v);
  b.shuffle(w);
  REQUIRE(v == w);
  std::set<int> s(v.begin(), v.end());
  REQUIRE(s.size() == 100);
  REQUIRE(v != std::vector<int>(s.begin(), s.end()));  // actually moved
}
