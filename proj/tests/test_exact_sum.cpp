// Copyright 2026 The bpmf-dist Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "bpmf/exact_sum.hpp"

using namespace bpmf;

TEST_SUITE("exact_sum") {

TEST_CASE("cancellation that defeats naive summation") {
  ExactSum s;
  for (double x : {1e100, 1.0, -1e100}) s.add(x);
  CHECK(s.value() == 1.0);
  ExactSum t;
  for (double x : {0.1, 0.2, 0.3, -0.6}) t.add(x);
  // Exact sum of the four doubles, correctly rounded.
  CHECK(t.value() == 2.7755575615628914e-17);
}

// Multiples of 2^-40 with |x| < 2^12 sum exactly in 128-bit integers, which
// gives an independent exact answer to compare against.
TEST_CASE("matches an integer oracle and ignores order and grouping") {
  std::mt19937_64 gen(1);
  std::uniform_int_distribution<std::int64_t> ticks(-(std::int64_t(1) << 52), std::int64_t(1) << 52);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> xs(1000);
    __int128 exact = 0;
    for (auto& x : xs) {
      const auto t = ticks(gen);
      exact += t;
      x = std::ldexp(static_cast<double>(t), -40);
    }
    const double expected = std::ldexp(static_cast<double>(exact), -40);
    ExactSum a;
    for (double x : xs) a.add(x);
    CHECK(a.value() == expected);

    std::shuffle(xs.begin(), xs.end(), gen);
    ExactSum left, right;
    for (std::size_t i = 0; i < xs.size(); ++i) (i % 3 ? left : right).add(xs[i]);
    right.merge(left);
    CHECK(right.value() == a.value());
    CHECK(ExactSum::from_partials(a.partials()).value() == a.value());
  }
}

TEST_CASE("wide dynamic range is order invariant") {
  std::mt19937_64 gen(2);
  std::uniform_real_distribution<double> mant(-1.0, 1.0);
  std::uniform_int_distribution<int> expo(-60, 60);
  std::vector<double> xs(5000);
  for (auto& x : xs) x = std::ldexp(mant(gen), expo(gen));
  ExactSum a;
  for (double x : xs) a.add(x);
  for (int rep = 0; rep < 5; ++rep) {
    std::shuffle(xs.begin(), xs.end(), gen);
    ExactSum b;
    for (double x : xs) b.add(x);
    CHECK(b.value() == a.value());
  }
}

TEST_CASE("vector sums merge elementwise") {
  ExactSumVector a(3), b(3);
  a.add(0, 1.0);
  a.add(2, 1e30);
  b.add(2, -1e30);
  b.add(1, 2.5);
  a.merge(b);
  CHECK(a.values() == std::vector<double>{1.0, 2.5, 0.0});
}

}
