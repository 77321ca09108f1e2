// Copyright 2026 The bpmf-dist Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>

#include "bpmf/linalg.hpp"
#include "bpmf/rng.hpp"

namespace bpmf {

/// Gamma(shape, scale = 1), Marsaglia-Tsang; shape < 1 uses the U^(1/a) boost.
double sample_gamma(double shape, CounterRng& rng);
double sample_chi_squared(double df, CounterRng& rng);

/// Draw from N(mean, P^{-1}) where precision_chol is the lower Cholesky
/// factor of P: mean + L^{-T} z with z ~ N(0, I).
Vector sample_mvn(std::span<const double> mean, const SquareMatrix& precision_chol, CounterRng& rng);

/// Wishart(df, S) with S = scale_chol * scale_chol^T, via the Bartlett
/// decomposition. Throws Error(kBadDegreesOfFreedom) if df < K.
SquareMatrix sample_wishart(double df, const SquareMatrix& scale_chol, CounterRng& rng);

}  // namespace bpmf
