// Copyright 2026 The bpmf-dist Authors
// SPDX-License-Identifier: Apache-2.0

#include "bpmf/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "bpmf/error.hpp"

namespace bpmf {

SquareMatrix::SquareMatrix(std::size_t order, std::vector<double> row_major)
    : order_(order), data_(std::move(row_major)) {
  if (data_.size() != order_ * order_) {
    fail(ErrorKind::kLengthMismatch, "square matrix of order " + std::to_string(order_) +
                                         " needs " + std::to_string(order_ * order_) + " values");
  }
}

SquareMatrix SquareMatrix::identity(std::size_t order) {
  SquareMatrix m(order);
  for (std::size_t i = 0; i < order; ++i) m(i, i) = 1.0;
  return m;
}

SquareMatrix SquareMatrix::diagonal(std::span<const double> diag) {
  SquareMatrix m(diag.size());
  for (std::size_t i = 0; i < diag.size(); ++i) m(i, i) = diag[i];
  return m;
}

SquareMatrix SquareMatrix::transposed() const {
  SquareMatrix t(order_);
  for (std::size_t i = 0; i < order_; ++i)
    for (std::size_t j = 0; j < order_; ++j) t(j, i) = (*this)(i, j);
  return t;
}

SquareMatrix& SquareMatrix::operator+=(const SquareMatrix& other) {
  if (other.order_ != order_) fail(ErrorKind::kLengthMismatch, "matrix order mismatch in +=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

SquareMatrix& SquareMatrix::operator*=(double s) {
  for (double& v : data_) v *= s;
  return *this;
}

SquareMatrix cholesky(const SquareMatrix& a) {
  const std::size_t n = a.order();
  double scale = 0.0;
  for (double v : a.values()) scale = std::max(scale, std::abs(v));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      if (std::abs(a(i, j) - a(j, i)) > 1e-12 * scale) {
        fail(ErrorKind::kNotPositiveDefinite,
             "matrix is not symmetric at (" + std::to_string(i) + "," + std::to_string(j) + ")");
      }
    }
  }

  SquareMatrix l(n);
  for (std::size_t j = 0; j < n; ++j) {
    const auto lj = l.row(j);
    double d = a(j, j);
    for (std::size_t k = 0; k < j; ++k) d -= lj[k] * lj[k];
    if (!(d > 0.0) || !std::isfinite(d)) {
      fail(ErrorKind::kNotPositiveDefinite, "non-positive pivot at column " + std::to_string(j));
    }
    const double ljj = std::sqrt(d);
    lj[j] = ljj;
    for (std::size_t i = j + 1; i < n; ++i) {
      const auto li = l.row(i);
      double s = 0.5 * (a(i, j) + a(j, i));
      for (std::size_t k = 0; k < j; ++k) s -= li[k] * lj[k];
      li[j] = s / ljj;
    }
  }
  return l;
}

void chol_rank1_update_inplace(SquareMatrix& l, std::span<double> x) {
  const std::size_t n = l.order();
  for (std::size_t k = 0; k < n; ++k) {
    const double lkk = l(k, k);
    const double xk = x[k];
    if (xk == 0.0) continue;
    const double r = std::hypot(lkk, xk);
    const double c = r / lkk;
    const double s = xk / lkk;
    l(k, k) = r;
    for (std::size_t i = k + 1; i < n; ++i) {
      double& lik = l(i, k);
      lik = (lik + s * x[i]) / c;
      x[i] = c * x[i] - s * lik;
    }
  }
}

SquareMatrix chol_rank1_update(const SquareMatrix& l, std::span<const double> x) {
  if (x.size() != l.order()) fail(ErrorKind::kLengthMismatch, "rank-one update vector length");
  SquareMatrix out = l;
  Vector scratch(x.begin(), x.end());
  chol_rank1_update_inplace(out, scratch);
  return out;
}

void tri_solve_inplace(const SquareMatrix& l, std::span<double> b, TriangularSide side) {
  const std::size_t n = l.order();
  if (b.size() != n) fail(ErrorKind::kLengthMismatch, "triangular solve rhs length");
  for (std::size_t i = 0; i < n; ++i) {
    if (l(i, i) == 0.0) {
      fail(ErrorKind::kSingularFactor, "zero diagonal at " + std::to_string(i));
    }
  }
  if (side == TriangularSide::kLower) {
    for (std::size_t i = 0; i < n; ++i) {
      const auto li = l.row(i);
      double s = b[i];
      for (std::size_t k = 0; k < i; ++k) s -= li[k] * b[k];
      b[i] = s / li[i];
    }
  } else {
    for (std::size_t ii = n; ii-- > 0;) {
      double s = b[ii];
      for (std::size_t k = ii + 1; k < n; ++k) s -= l(k, ii) * b[k];
      b[ii] = s / l(ii, ii);
    }
  }
}

Vector tri_solve(const SquareMatrix& l, std::span<const double> b, TriangularSide side) {
  Vector y(b.begin(), b.end());
  tri_solve_inplace(l, y, side);
  return y;
}

SquareMatrix multiply(const SquareMatrix& a, const SquareMatrix& b) {
  const std::size_t n = a.order();
  if (b.order() != n) fail(ErrorKind::kLengthMismatch, "matrix order mismatch in multiply");
  SquareMatrix c(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < n; ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) c(i, j) += aik * b(k, j);
    }
  return c;
}

Vector multiply(const SquareMatrix& a, std::span<const double> x) {
  const std::size_t n = a.order();
  if (x.size() != n) fail(ErrorKind::kLengthMismatch, "matrix-vector length mismatch");
  Vector y(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) y[i] = dot(a.row(i), x);
  return y;
}

SquareMatrix lower_times_transpose(const SquareMatrix& l) {
  const std::size_t n = l.order();
  SquareMatrix a(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j <= i; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k <= j; ++k) s += l(i, k) * l(j, k);
      a(i, j) = s;
      a(j, i) = s;
    }
  return a;
}

SquareMatrix spd_inverse(const SquareMatrix& a) {
  const std::size_t n = a.order();
  const SquareMatrix l = cholesky(a);
  SquareMatrix inv(n);
  Vector col(n);
  for (std::size_t j = 0; j < n; ++j) {
    std::fill(col.begin(), col.end(), 0.0);
    col[j] = 1.0;
    tri_solve_inplace(l, col, TriangularSide::kLower);
    tri_solve_inplace(l, col, TriangularSide::kUpperTransposed);
    for (std::size_t i = 0; i < n; ++i) inv(i, j) = col[i];
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < i; ++j) {
      const double s = 0.5 * (inv(i, j) + inv(j, i));
      inv(i, j) = s;
      inv(j, i) = s;
    }
  return inv;
}

void add_outer(SquareMatrix& a, std::span<const double> x, double scale) {
  const std::size_t n = a.order();
  for (std::size_t i = 0; i < n; ++i) {
    const double xi = scale * x[i];
    const auto ai = a.row(i);
    for (std::size_t j = 0; j < n; ++j) ai[j] += xi * x[j];
  }
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double frobenius_norm(const SquareMatrix& a) {
  double s = 0.0;
  for (double v : a.values()) s += v * v;
  return std::sqrt(s);
}

double frobenius_distance(const SquareMatrix& a, const SquareMatrix& b) {
  double s = 0.0;
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < av.size(); ++i) s += (av[i] - bv[i]) * (av[i] - bv[i]);
  return std::sqrt(s);
}

}  // namespace bpmf
