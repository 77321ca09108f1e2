// Copyright 2026 The bpmf-dist Authors
// SPDX-License-Identifier: Apache-2.0

#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "bpmf/error.hpp"
#include "bpmf/linalg.hpp"

using namespace bpmf;

TEST_SUITE("linalg") {

TEST_CASE("cholesky agrees with Eigen's LLT") {
  std::mt19937_64 gen(1);
  for (int k : {1, 2, 3, 8, 32}) {
    const Eigen::MatrixXd a = oracle::random_spd(k, gen);
    const SquareMatrix l = cholesky(oracle::from_eigen(a));
    const Eigen::MatrixXd ref = Eigen::LLT<Eigen::MatrixXd>(a).matrixL();
    CHECK(oracle::max_abs_diff(oracle::to_eigen(l), ref) < 1e-10 * a.norm());
    for (int r = 0; r < k; ++r)
      for (int c = r + 1; c < k; ++c) CHECK(l(r, c) == 0.0);
  }
}

TEST_CASE("cholesky rejects indefinite and asymmetric input") {
  SquareMatrix a(2);
  a(0, 0) = 1;
  a(1, 1) = -1;
  CHECK_THROWS_AS(cholesky(a), Error);
  try {
    cholesky(a);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kNotPositiveDefinite);
  }
  SquareMatrix b = SquareMatrix::identity(2);
  b(0, 1) = 0.5;
  CHECK_THROWS_AS(cholesky(b), Error);
}

TEST_CASE("rank-one update equals refactoring A + x x^T") {
  std::mt19937_64 gen(2);
  std::normal_distribution<double> n;
  for (int k : {1, 3, 10, 32}) {
    Eigen::MatrixXd a = oracle::random_spd(k, gen);
    SquareMatrix l = cholesky(oracle::from_eigen(a));
    for (int step = 0; step < 20; ++step) {
      Vector x(k);
      for (auto& v : x) v = n(gen);
      const Eigen::VectorXd xe = oracle::to_eigen(x);
      a += xe * xe.transpose();
      chol_rank1_update_inplace(l, x);
    }
    const Eigen::MatrixXd ref = Eigen::LLT<Eigen::MatrixXd>(a).matrixL();
    CHECK(oracle::max_abs_diff(oracle::to_eigen(l), ref) < 1e-9 * a.norm());
  }
}

TEST_CASE("triangular solves invert L and L^T") {
  std::mt19937_64 gen(3);
  std::normal_distribution<double> n;
  const int k = 12;
  const Eigen::MatrixXd a = oracle::random_spd(k, gen);
  const SquareMatrix l = cholesky(oracle::from_eigen(a));
  const Eigen::MatrixXd le = oracle::to_eigen(l);
  Vector b(k);
  for (auto& v : b) v = n(gen);
  const auto y = tri_solve(l, b, TriangularSide::kLower);
  CHECK((le * oracle::to_eigen(y) - oracle::to_eigen(b)).cwiseAbs().maxCoeff() < 1e-10);
  const auto z = tri_solve(l, b, TriangularSide::kUpperTransposed);
  CHECK((le.transpose() * oracle::to_eigen(z) - oracle::to_eigen(b)).cwiseAbs().maxCoeff() < 1e-10);
  SquareMatrix singular = SquareMatrix::identity(2);
  singular(1, 1) = 0.0;
  Vector two{1.0, 1.0};
  CHECK_THROWS_AS(tri_solve(singular, two, TriangularSide::kLower), Error);
}

TEST_CASE("products, inverse and norms") {
  std::mt19937_64 gen(4);
  const Eigen::MatrixXd a = oracle::random_spd(6, gen);
  const Eigen::MatrixXd b = oracle::random_spd(6, gen);
  const auto prod = multiply(oracle::from_eigen(a), oracle::from_eigen(b));
  CHECK(oracle::max_abs_diff(oracle::to_eigen(prod), a * b) < 1e-12 * (a * b).norm());
  const auto inv = spd_inverse(oracle::from_eigen(a));
  CHECK(oracle::max_abs_diff(oracle::to_eigen(inv), a.inverse()) < 1e-10 * a.inverse().norm());
  const auto l = cholesky(oracle::from_eigen(a));
  CHECK(oracle::max_abs_diff(oracle::to_eigen(lower_times_transpose(l)), a) < 1e-10 * a.norm());
  CHECK(frobenius_norm(oracle::from_eigen(a)) == doctest::Approx(a.norm()));
  Vector u{1, 2}, v{3, 4};
  CHECK(dot(u, v) == 11.0);
  SquareMatrix outer(2);
  add_outer(outer, u, 2.0);
  CHECK(outer(0, 1) == 4.0);
  CHECK(outer(1, 1) == 8.0);
}

}
