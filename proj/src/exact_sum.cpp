// Copyright 2026 The bpmf-dist Authors
// SPDX-License-Identifier: Apache-2.0

#include "bpmf/exact_sum.hpp"

#include <cmath>
#include <utility>

#include "bpmf/error.hpp"

namespace bpmf {

void ExactSum::add(double x) {
  std::size_t used = 0;
  for (double y : partials_) {
    if (std::abs(x) < std::abs(y)) std::swap(x, y);
    const double hi = x + y;
    const double lo = y - (hi - x);
    if (lo != 0.0) partials_[used++] = lo;
    x = hi;
  }
  partials_.resize(used + 1);
  partials_[used] = x;
}

void ExactSum::merge(const ExactSum& other) {
  for (double p : other.partials_) add(p);
}

double ExactSum::value() const {
  // Round-half-even correction as in CPython's math.fsum.
  std::size_t n = partials_.size();
  if (n == 0) return 0.0;
  double hi = partials_[--n];
  double lo = 0.0;
  while (n > 0) {
    const double x = hi;
    const double y = partials_[--n];
    hi = x + y;
    const double yr = hi - x;
    lo = y - yr;
    if (lo != 0.0) break;
  }
  if (n > 0 && ((lo < 0.0 && partials_[n - 1] < 0.0) || (lo > 0.0 && partials_[n - 1] > 0.0))) {
    const double y = lo * 2.0;
    const double x = hi + y;
    const double yr = x - hi;
    if (y == yr) hi = x;
  }
  return hi;
}

ExactSum ExactSum::from_partials(std::span<const double> partials) {
  ExactSum s;
  for (double p : partials) s.add(p);
  return s;
}

void ExactSumVector::merge(const ExactSumVector& other) {
  if (other.size() != size()) fail(ErrorKind::kLengthMismatch, "exact sum vector length");
  for (std::size_t i = 0; i < sums_.size(); ++i) sums_[i].merge(other.sums_[i]);
}

std::vector<double> ExactSumVector::values() const {
  std::vector<double> out(sums_.size());
  for (std::size_t i = 0; i < sums_.size(); ++i) out[i] = sums_[i].value();
  return out;
}

}  // namespace bpmf
