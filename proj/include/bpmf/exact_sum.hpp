// Copyright 2026 The bpmf-dist Authors
// SPDX-License-Identifier: Apache-2.0

// Order-independent floating-point summation. Partial sums are kept as a
// non-overlapping expansion (Shewchuk), so the exact value of the sum is
// represented and value() returns it correctly rounded. Any grouping of the
// same addends (per worker, per node, merged in any order) yields the same
// double bit pattern.

#pragma once

#include <span>
#include <vector>

namespace bpmf {

class ExactSum {
 public:
  ExactSum() = default;

  void add(double x);
  void merge(const ExactSum& other);
  double value() const;

  std::span<const double> partials() const noexcept { return partials_; }
  static ExactSum from_partials(std::span<const double> partials);

 private:
  std::vector<double> partials_;  // increasing magnitude, non-overlapping
};

/// A fixed-length vector of exact sums.
class ExactSumVector {
 public:
  ExactSumVector() = default;
  explicit ExactSumVector(std::size_t size) : sums_(size) {}

  std::size_t size() const noexcept { return sums_.size(); }
  void add(std::size_t i, double x) { sums_[i].add(x); }
  void merge(const ExactSumVector& other);
  ExactSum& operator[](std::size_t i) { return sums_[i]; }
  const ExactSum& operator[](std::size_t i) const { return sums_[i]; }
  std::vector<double> values() const;

 private:
  std::vector<ExactSum> sums_;
};

}  // namespace bpmf
