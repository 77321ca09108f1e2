// Copyright 2026 The bpmf-dist Authors
// SPDX-License-Identifier: Apache-2.0

// Dense K x K kernels used by every item update and hyperparameter draw.
// K is small (tens, at most ~1000), so everything here is plain loops over
// row-major storage.

#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace bpmf {

using Vector = std::vector<double>;

class SquareMatrix {
 public:
  SquareMatrix() = default;
  explicit SquareMatrix(std::size_t order, double fill = 0.0)
      : order_(order), data_(order * order, fill) {}
  SquareMatrix(std::size_t order, std::vector<double> row_major);

  static SquareMatrix identity(std::size_t order);
  static SquareMatrix diagonal(std::span<const double> diag);

  std::size_t order() const noexcept { return order_; }
  double& operator()(std::size_t row, std::size_t col) { return data_[row * order_ + col]; }
  double operator()(std::size_t row, std::size_t col) const { return data_[row * order_ + col]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * order_, order_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * order_, order_}; }
  std::span<const double> values() const noexcept { return data_; }
  std::span<double> values() noexcept { return data_; }

  SquareMatrix transposed() const;
  SquareMatrix& operator+=(const SquareMatrix& other);
  SquareMatrix& operator*=(double s);

  bool operator==(const SquareMatrix&) const = default;

 private:
  std::size_t order_ = 0;
  std::vector<double> data_;
};

enum class TriangularSide {
  kLower,            // solve L y = b
  kUpperTransposed,  // solve L^T y = b
};

/// Lower Cholesky factor of a symmetric positive definite matrix. The input is
/// checked for symmetry (1e-12 relative to its largest entry) and then
/// symmetrized before factoring.
/// Throws Error(kNotPositiveDefinite) on an asymmetric input or a pivot <= 0.
SquareMatrix cholesky(const SquareMatrix& a);

/// Factor of l*l^T + x*x^T, computed in O(K^2) with Givens-style sweeps.
SquareMatrix chol_rank1_update(const SquareMatrix& l, std::span<const double> x);

// In-place form used on hot paths; `x` is clobbered.
void chol_rank1_update_inplace(SquareMatrix& l, std::span<double> x);

Vector tri_solve(const SquareMatrix& l, std::span<const double> b, TriangularSide side);
void tri_solve_inplace(const SquareMatrix& l, std::span<double> b, TriangularSide side);

SquareMatrix multiply(const SquareMatrix& a, const SquareMatrix& b);
Vector multiply(const SquareMatrix& a, std::span<const double> x);

/// l * l^T for a lower-triangular l.
SquareMatrix lower_times_transpose(const SquareMatrix& l);

/// Inverse of an SPD matrix through its Cholesky factor; result is exactly
/// symmetric.
SquareMatrix spd_inverse(const SquareMatrix& a);

// a += scale * x * x^T
void add_outer(SquareMatrix& a, std::span<const double> x, double scale = 1.0);

double dot(std::span<const double> a, std::span<const double> b);
double frobenius_norm(const SquareMatrix& a);
double frobenius_distance(const SquareMatrix& a, const SquareMatrix& b);

}  // namespace bpmf
