// Copyright 2026 The bpmf-dist Authors
// SPDX-License-Identifier: Apache-2.0

#include "doctest.h"
#include "oracles.hpp"
#include "bpmf/distributions.hpp"
#include "bpmf/error.hpp"

using namespace bpmf;

TEST_SUITE("distributions") {

TEST_CASE("gamma mean and variance equal the shape") {
  for (double shape : {0.3, 1.0, 2.5, 40.0}) {
    const int n = 100000;
    double s = 0, sq = 0;
    for (int i = 0; i < n; ++i) {
      CounterRng rng(5, {0, Purpose::kTest, static_cast<std::uint32_t>(i)});
      const double g = sample_gamma(shape, rng);
      REQUIRE(g >= 0.0);
      s += g;
      sq += g * g;
    }
    const double mean = s / n, var = sq / n - mean * mean;
    CHECK(mean == doctest::Approx(shape).epsilon(0.02 + 0.05 / std::sqrt(shape)));
    CHECK(var == doctest::Approx(shape).epsilon(0.05 + 0.05 / std::sqrt(shape)));
  }
}

TEST_CASE("multivariate normal has the requested mean and covariance") {
  std::mt19937_64 gen(9);
  const int k = 3;
  const Eigen::MatrixXd p = oracle::random_spd(k, gen, 1.0);
  const Eigen::MatrixXd cov = p.inverse();
  const Vector mean{1.0, -2.0, 0.5};
  const SquareMatrix l = cholesky(oracle::from_eigen(p));
  const int n = 100000;
  Eigen::VectorXd s = Eigen::VectorXd::Zero(k);
  Eigen::MatrixXd ss = Eigen::MatrixXd::Zero(k, k);
  for (int i = 0; i < n; ++i) {
    CounterRng rng(6, {0, Purpose::kTest, static_cast<std::uint32_t>(i)});
    const Eigen::VectorXd x = oracle::to_eigen(sample_mvn(mean, l, rng));
    s += x;
    ss += x * x.transpose();
  }
  const Eigen::VectorXd m = s / n;
  const Eigen::MatrixXd c = ss / n - m * m.transpose();
  CHECK((m - oracle::to_eigen(mean)).cwiseAbs().maxCoeff() < 5.0 * std::sqrt(cov.diagonal().maxCoeff() / n));
  CHECK(oracle::max_abs_diff(c, cov) < 0.03 * cov.norm());
}

TEST_CASE("wishart mean is df * scale") {
  std::mt19937_64 gen(10);
  const int k = 4;
  const Eigen::MatrixXd scale = oracle::random_spd(k, gen, 1.0) / 4.0;
  const SquareMatrix l = cholesky(oracle::from_eigen(scale));
  const double df = 7.0;
  const int n = 40000;
  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(k, k);
  for (int i = 0; i < n; ++i) {
    CounterRng rng(12, {0, Purpose::kTest, static_cast<std::uint32_t>(i)});
    const Eigen::MatrixXd w = oracle::to_eigen(sample_wishart(df, l, rng));
    REQUIRE((w - w.transpose()).cwiseAbs().maxCoeff() < 1e-12);
    s += w;
  }
  const Eigen::MatrixXd mean = s / n;
  // Var(W_ij) = df (S_ij^2 + S_ii S_jj); 5 standard errors.
  for (int r = 0; r < k; ++r)
    for (int c = 0; c < k; ++c) {
      const double sd = std::sqrt(df * (scale(r, c) * scale(r, c) + scale(r, r) * scale(c, c)) / n);
      CHECK(std::abs(mean(r, c) - df * scale(r, c)) < 5.0 * sd);
    }
  CounterRng rng(1, {0, Purpose::kTest, 0});
  CHECK_THROWS_AS(sample_wishart(2.0, l, rng), Error);
}

}
