// Copyright 2026 The bpmf-dist Authors
// SPDX-License-Identifier: Apache-2.0

#include "bpmf/distributions.hpp"

#include <cmath>
#include <string>

#include "bpmf/error.hpp"

namespace bpmf {

double sample_gamma(double shape, CounterRng& rng) {
  if (!(shape > 0.0)) fail(ErrorKind::kInvalidArgument, "gamma shape must be positive");
  if (shape < 1.0) {
    const double g = sample_gamma(shape + 1.0, rng);
    return g * std::pow(rng.uniform(), 1.0 / shape);
  }
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x, v;
    do {
      x = rng.normal();
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = rng.uniform();
    if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
    if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
  }
}

double sample_chi_squared(double df, CounterRng& rng) { return 2.0 * sample_gamma(0.5 * df, rng); }

Vector sample_mvn(std::span<const double> mean, const SquareMatrix& precision_chol, CounterRng& rng) {
  const std::size_t k = precision_chol.order();
  if (mean.size() != k) fail(ErrorKind::kLengthMismatch, "mvn mean length");
  Vector z(k);
  for (double& v : z) v = rng.normal();
  tri_solve_inplace(precision_chol, z, TriangularSide::kUpperTransposed);
  for (std::size_t i = 0; i < k; ++i) z[i] += mean[i];
  return z;
}

SquareMatrix sample_wishart(double df, const SquareMatrix& scale_chol, CounterRng& rng) {
  const std::size_t k = scale_chol.order();
  if (!(df >= static_cast<double>(k))) {
    fail(ErrorKind::kBadDegreesOfFreedom,
         "df " + std::to_string(df) + " below dimension " + std::to_string(k));
  }
  // Bartlett factor A: sqrt(chi2(df - i)) on the diagonal, N(0,1) below it.
  SquareMatrix a(k);
  for (std::size_t i = 0; i < k; ++i) {
    a(i, i) = std::sqrt(sample_chi_squared(df - static_cast<double>(i), rng));
    for (std::size_t j = 0; j < i; ++j) a(i, j) = rng.normal();
  }
  // B = L * A is lower triangular; sample = B * B^T.
  SquareMatrix b(k);
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j <= i; ++j) {
      double s = 0.0;
      for (std::size_t m = j; m <= i; ++m) s += scale_chol(i, m) * a(m, j);
      b(i, j) = s;
    }
  return lower_times_transpose(b);
}

}  // namespace bpmf
