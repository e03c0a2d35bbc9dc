#include <algorithm>
#include <cstdint>
#include <numeric>
#include <set>
#include <vector>

#include "doctest.h"
#include "pathtext/errors.hpp"
#include "pathtext/rng.hpp"

using pathtext::Rng;

TEST_SUITE_BEGIN("rng");

TEST_CASE("raw stream matches the mt19937_64 reference sequence") {
  // First outputs for seed 42, computed with an independent port of the
  // generator (state init 6364136223846793005 * (x ^ (x >> 62)) + i).
  const uint64_t expected[5] = {
      13930160852258120406ull, 11788048577503494824ull, 13874630024467741450ull,
      2513787319205155662ull, 16662371453428439381ull};
  Rng rng(42);
  for (uint64_t e : expected) CHECK(rng.next_u64() == e);
}

TEST_CASE("uniform is (x >> 11) * 2^-53 of the raw stream") {
  const double expected[3] = {0.755155532954539, 0.6390313938546974, 0.7521452007480266};
  Rng rng(42);
  for (double e : expected) CHECK(rng.uniform() == doctest::Approx(e).epsilon(1e-15));
}

TEST_CASE("same seed, same stream") {
  Rng a(7), b(7);
  for (int i = 0; i < 64; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("uniform stays in [0, 1) with sane mean") {
  Rng rng(1);
  double sum = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const double u = rng.uniform();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    sum += u;
  }
  CHECK(sum / 10000 == doctest::Approx(0.5).epsilon(0.02));
}

TEST_CASE("uniform_int covers its range and nothing else") {
  Rng rng(3);
  std::set<int64_t> seen;
  for (int i = 0; i < 2000; ++i) {
    const int64_t x = rng.uniform_int(7);
    REQUIRE(x >= 0);
    REQUIRE(x < 7);
    seen.insert(x);
  }
  CHECK(seen.size() == 7);
  CHECK_THROWS_AS(rng.uniform_int(0), pathtext::EmptyInput);
  CHECK_THROWS_AS(rng.uniform_int(-2), pathtext::EmptyInput);
}

TEST_CASE("normal consumes exactly two uniforms per call") {
  // z = sqrt(-2 ln u1) cos(2 pi u2) for the first two uniforms of seed 123.
  Rng rng(123);
  CHECK(rng.normal() == doctest::Approx(-1.430468121035136).epsilon(1e-12));

  // Stream position after a normal() equals two uniform() draws.
  Rng a(9), b(9);
  a.normal();
  b.uniform();
  b.uniform();
  CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("normal has roughly standard moments") {
  Rng rng(11);
  const int n = 20000;
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double z = rng.normal();
    sum += z;
    sq += z * z;
  }
  const double mean = sum / n;
  const double var = sq / n - mean * mean;
  CHECK(mean == doctest::Approx(0.0).epsilon(1).scale(0.05));
  CHECK(var == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("shuffle permutes") {
  Rng rng(5);
  std::vector<int> v(50);
  std::iota(v.begin(), v.end(), 0);
  const std::vector<int> orig = v;
  rng.shuffle(v);
  CHECK(v != orig);  // astronomically unlikely to be identity
  std::vector<int> sorted = v;
  std::sort(sorted.begin(), sorted.end());
  CHECK(sorted == orig);
}

TEST_CASE("bernoulli degenerate probabilities") {
  Rng rng(2);
  for (int i = 0; i < 100; ++i) {
    CHECK_FALSE(rng.bernoulli(0.0));
    CHECK(rng.bernoulli(1.0));
  }
}

TEST_CASE("save_state / restore_state replays the stream exactly") {
  Rng rng(77);
  for (int i = 0; i < 13; ++i) rng.uniform();
  const std::string snap = rng.save_state();

  std::vector<double> ahead;
  for (int i = 0; i < 8; ++i) ahead.push_back(rng.uniform());
  ahead.push_back(rng.normal());
  ahead.push_back(static_cast<double>(rng.uniform_int(1000)));

  rng.restore_state(snap);
  for (int i = 0; i < 8; ++i) CHECK(rng.uniform() == ahead[i]);
  CHECK(rng.normal() == ahead[8]);
  CHECK(static_cast<double>(rng.uniform_int(1000)) == ahead[9]);

  // A fresh object restored from the snapshot continues identically too.
  Rng other(0);
  other.restore_state(snap);
  rng.restore_state(snap);
  for (int i = 0; i < 16; ++i) CHECK(other.next_u64() == rng.next_u64());
}

TEST_SUITE_END();
