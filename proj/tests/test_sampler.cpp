// Copyright 2026 The bpmf-dist Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <algorithm>
#include <numeric>
#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "bpmf/error.hpp"
#include "bpmf/sampler.hpp"

using namespace bpmf;

namespace {

template <typename Gen>
LatentMatrix random_latent(Side side, std::uint32_t rows, std::size_t k, Gen& gen, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  LatentMatrix m(side, rows, k);
  for (double& v : m.values()) v = n(gen);
  m.recompute_aggregates();
  return m;
}

template <typename Gen>
std::vector<Entry> random_entries(std::uint32_t others, std::size_t count, Gen& gen) {
  std::vector<std::uint32_t> idx(others);
  std::iota(idx.begin(), idx.end(), 0u);
  std::shuffle(idx.begin(), idx.end(), gen);
  idx.resize(std::min<std::size_t>(count, others));
  std::sort(idx.begin(), idx.end());
  std::uniform_real_distribution<double> r(1.0, 5.0);
  std::vector<Entry> e;
  for (auto i : idx) e.push_back({i, r(gen)});
  return e;
}

template <typename Gen>
HyperParams random_hyper(std::size_t k, Gen& gen) {
  std::normal_distribution<double> n(0.0, 1.0);
  Vector mu(k);
  for (double& x : mu) x = n(gen);
  return HyperParams::from(mu, oracle::from_eigen(oracle::random_spd(static_cast<Eigen::Index>(k), gen)));
}

// The K standard normals update_item consumes from a fresh stream.
Eigen::VectorXd normals(CounterRng rng, std::size_t k) {
  Eigen::VectorXd z(static_cast<Eigen::Index>(k));
  for (std::size_t a = 0; a < k; ++a) z[static_cast<Eigen::Index>(a)] = rng.normal();
  return z;
}

double rel_diff(std::span<const double> a, std::span<const double> b) {
  double num = 0, den = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num = std::max(num, std::abs(a[i] - b[i]));
    den = std::max(den, std::abs(b[i]));
  }
  return num / std::max(den, 1.0);
}

}  // namespace

TEST_SUITE("sampler") {

TEST_CASE("item conditional matches the dense formula") {
  std::mt19937_64 gen(21);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t k = 1 + gen() % 3;
    const auto n_others = static_cast<std::uint32_t>(1 + gen() % 8);
    const auto others = random_latent(Side::kUser, n_others, k, gen);
    const auto entries = random_entries(n_others, gen() % 9, gen);
    const auto hyper = random_hyper(k, gen);
    const double alpha = 0.5 + double(gen() % 40) / 10.0, offset = double(gen() % 3);
    const auto c = item_conditional(entries, others, hyper, alpha, offset);
    const auto o = oracle::dense_conditional(entries, others, oracle::to_eigen(hyper.mu),
                                             oracle::to_eigen(hyper.lambda), alpha, offset);
    CHECK(oracle::max_abs_diff(oracle::to_eigen(c.precision), o.precision) <= 1e-12);
    CHECK((oracle::to_eigen(c.mean) - o.mean).cwiseAbs().maxCoeff() <= 1e-12);

    const CounterRng rng(5, {1, Purpose::kMovieUpdate, std::uint32_t(trial)});
    for (auto m : {UpdateMethod::kRankOne, UpdateMethod::kSeqCholesky, UpdateMethod::kParCholesky}) {
      CounterRng r = rng;
      const Vector x = update_item(entries, others, hyper, alpha, offset, r, m);
      CHECK((oracle::to_eigen(x) - oracle::draw(o, normals(rng, k))).cwiseAbs().maxCoeff() <= 1e-10);
    }
  }
}

TEST_CASE("K=2, three ratings, alpha 2") {
  LatentMatrix others(Side::kUser, 3, 2);
  const double vals[] = {1.0, 0.5, -0.25, 2.0, 0.75, -1.0};
  std::copy(std::begin(vals), std::end(vals), others.values().begin());
  const std::vector<Entry> e = {{0, 4.0}, {1, 3.0}, {2, 5.0}};
  const auto hyper = HyperParams::from({0.1, -0.2}, SquareMatrix(2, {2.0, 0.3, 0.3, 1.0}));
  const auto c = item_conditional(e, others, hyper, 2.0, 0.0);
  // Hand-expanded: P = Lambda + 2 * sum v v^T.
  const double p00 = 2.0 + 2 * (1.0 + 0.0625 + 0.5625), p01 = 0.3 + 2 * (0.5 - 0.5 - 0.75),
               p11 = 1.0 + 2 * (0.25 + 4.0 + 1.0);
  CHECK(std::abs(c.precision(0, 0) - p00) <= 1e-12);
  CHECK(std::abs(c.precision(0, 1) - p01) <= 1e-12);
  CHECK(std::abs(c.precision(1, 1) - p11) <= 1e-12);
  const double b0 = 2.0 * 0.1 + 0.3 * -0.2 + 2 * (4.0 * 1.0 + 3.0 * -0.25 + 5.0 * 0.75);
  const double b1 = 0.3 * 0.1 + 1.0 * -0.2 + 2 * (4.0 * 0.5 + 3.0 * 2.0 + 5.0 * -1.0);
  const double det = p00 * p11 - p01 * p01;
  CHECK(std::abs(c.mean[0] - (p11 * b0 - p01 * b1) / det) <= 1e-12);
  CHECK(std::abs(c.mean[1] - (p00 * b1 - p01 * b0) / det) <= 1e-12);
}

TEST_CASE("kernels agree on the sampled vector") {
  std::mt19937_64 gen(8);
  for (std::size_t k : {8u, 32u}) {
    for (int trial = 0; trial < 20; ++trial) {
      const auto others = random_latent(Side::kUser, 2000, k, gen, 0.3);
      const auto entries = random_entries(2000, 1 + gen() % 1500, gen);
      const auto hyper = random_hyper(k, gen);
      const CounterRng rng(1, {0, Purpose::kMovieUpdate, std::uint32_t(trial)});
      CounterRng r1 = rng, r2 = rng, r3 = rng;
      const auto a = update_item(entries, others, hyper, 2.0, 3.0, r1, UpdateMethod::kRankOne);
      const auto b = update_item(entries, others, hyper, 2.0, 3.0, r2, UpdateMethod::kSeqCholesky);
      const auto c = update_item(entries, others, hyper, 2.0, 3.0, r3, UpdateMethod::kParCholesky);
      CHECK(rel_diff(a, b) <= 1e-8);
      CHECK(rel_diff(c, b) <= 1e-8);
      CHECK(r1.draws() == r2.draws());
    }
  }
}

TEST_CASE("no ratings samples the prior") {
  std::mt19937_64 gen(2);
  const std::size_t k = 3;
  const auto others = random_latent(Side::kUser, 4, k, gen);
  const auto hyper = random_hyper(k, gen);
  const auto c = item_conditional({}, others, hyper, 2.0, 0.0);
  CHECK(oracle::max_abs_diff(oracle::to_eigen(c.precision), oracle::to_eigen(hyper.lambda)) == 0.0);
  for (std::size_t a = 0; a < k; ++a) CHECK(std::abs(c.mean[a] - hyper.mu[a]) <= 1e-12);

  // Empirical moments of many draws.
  const int n = 20000;
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(k);
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(k, k);
  for (int i = 0; i < n; ++i) {
    CounterRng rng(3, {0, Purpose::kTest, std::uint32_t(i)});
    const auto x = oracle::to_eigen(update_item({}, others, hyper, 2.0, 0.0, rng, UpdateMethod::kRankOne));
    mean += x;
    cov += (x - oracle::to_eigen(hyper.mu)) * (x - oracle::to_eigen(hyper.mu)).transpose();
  }
  mean /= n;
  cov /= n;
  const Eigen::MatrixXd want = oracle::to_eigen(hyper.lambda).inverse();
  const double scale = std::sqrt(want.diagonal().maxCoeff());
  CHECK((mean - oracle::to_eigen(hyper.mu)).cwiseAbs().maxCoeff() <= 5 * scale / std::sqrt(double(n)));
  CHECK(oracle::max_abs_diff(cov, want) <= 0.05 * want.cwiseAbs().maxCoeff());
}

TEST_CASE("huge alpha recovers the least-squares vector") {
  std::mt19937_64 gen(4);
  const std::size_t k = 4;
  const auto others = random_latent(Side::kUser, 50, k, gen);
  const Vector truth = {0.7, -1.2, 0.3, 2.0};
  std::vector<Entry> e;
  for (std::uint32_t j = 0; j < 50; j += 2) e.push_back({j, 3.0 + dot(truth, others.row(j))});
  const auto hyper = HyperParams::from(Vector(k, 0.0), SquareMatrix::identity(k));
  for (auto m : {UpdateMethod::kRankOne, UpdateMethod::kSeqCholesky, UpdateMethod::kParCholesky}) {
    CounterRng rng(1, {0, Purpose::kTest, 0});
    const auto x = update_item(e, others, hyper, 1e8, 3.0, rng, m);
    for (std::size_t a = 0; a < k; ++a) CHECK(std::abs(x[a] - truth[a]) <= 1e-3);
  }
}

TEST_CASE("normal-wishart posterior matches the direct computation") {
  std::mt19937_64 gen(17);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t k = 1 + gen() % 3;
    const auto rows = static_cast<std::uint32_t>(gen() % 9);
    const auto side = random_latent(Side::kMovie, rows, k, gen);
    NwPrior prior = NwPrior::defaults(k);
    std::normal_distribution<double> n(0.0, 1.0);
    for (double& x : prior.mu0) x = n(gen);
    prior.beta0 = 0.5 + double(gen() % 5);
    prior.nu0 = double(k) + double(gen() % 3);
    prior.w0 = oracle::from_eigen(oracle::random_spd(static_cast<Eigen::Index>(k), gen, 1.0));
    const auto post = nw_posterior(rows, side.agg_sum(), side.agg_scatter(), prior);

    Eigen::MatrixXd x(rows, k);
    for (std::uint32_t i = 0; i < rows; ++i) x.row(i) = oracle::to_eigen(side.row(i)).transpose();
    const auto d = oracle::direct_nw(x, oracle::to_eigen(prior.mu0), prior.beta0, prior.nu0,
                                     oracle::to_eigen(prior.w0));
    CHECK(post.beta == d.beta);
    CHECK(post.nu == d.nu);
    CHECK((oracle::to_eigen(post.mu) - d.mu).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK(oracle::max_abs_diff(oracle::to_eigen(post.w), d.w) <= 1e-12 * std::max(1.0, d.w.cwiseAbs().maxCoeff()));
  }
}

TEST_CASE("hyperparameter draws") {
  const std::size_t k = 3;
  const NwPrior prior = NwPrior::defaults(k);
  const auto empty = nw_posterior(0, Vector(k, 0.0), SquareMatrix(k), prior);
  CHECK(empty.beta == prior.beta0);
  CHECK(empty.nu == prior.nu0);
  CHECK(empty.w == prior.w0);

  // 10^4 vectors drawn from N(m, C).
  std::mt19937_64 gen(99);
  const Vector m = {2.0, -3.0, 5.0};
  const Eigen::MatrixXd c = oracle::random_spd(3, gen, 0.5) * 0.1;
  const Eigen::MatrixXd lc = Eigen::LLT<Eigen::MatrixXd>(c).matrixL();
  LatentMatrix side(Side::kUser, 10000, k);
  std::normal_distribution<double> n(0.0, 1.0);
  for (std::uint32_t i = 0; i < 10000; ++i) {
    Eigen::Vector3d z(n(gen), n(gen), n(gen));
    const Eigen::Vector3d x = oracle::to_eigen(m) + lc * z;
    for (std::size_t a = 0; a < k; ++a) side.row(i)[a] = x[Eigen::Index(a)];
  }
  side.recompute_aggregates();
  CounterRng rng(1, {0, Purpose::kUserHyper, 0});
  const auto h = sample_hyper(side, prior, rng);
  for (std::size_t a = 0; a < k; ++a) CHECK(std::abs(h.mu[a] - m[a]) <= 0.02 * std::abs(m[a]));
  const Eigen::MatrixXd lam = oracle::to_eigen(h.lambda);
  CHECK(oracle::max_abs_diff(lam, c.inverse()) <= 0.1 * c.inverse().cwiseAbs().maxCoeff());
  const Eigen::MatrixXd l = oracle::to_eigen(h.lambda_chol);
  CHECK(oracle::max_abs_diff(l * l.transpose(), lam) <= 1e-10 * lam.cwiseAbs().maxCoeff());

  CounterRng again(1, {0, Purpose::kUserHyper, 0});
  const auto h2 = sample_hyper(side, prior, again);
  CHECK(h2.mu == h.mu);
  CHECK(h2.lambda == h.lambda);
}

TEST_CASE("aggregates") {
  std::mt19937_64 gen(6);
  auto side = random_latent(Side::kMovie, 123, 5, gen);
  const Vector sum = side.agg_sum();
  const SquareMatrix scatter = side.agg_scatter();
  Eigen::VectorXd s = Eigen::VectorXd::Zero(5);
  Eigen::MatrixXd sc = Eigen::MatrixXd::Zero(5, 5);
  for (std::uint32_t i = 0; i < 123; ++i) {
    const auto x = oracle::to_eigen(side.row(i));
    s += x;
    sc += x * x.transpose();
  }
  CHECK((oracle::to_eigen(sum) - s).cwiseAbs().maxCoeff() <= 1e-8 * std::max(1.0, s.cwiseAbs().maxCoeff()));
  CHECK(oracle::max_abs_diff(oracle::to_eigen(scatter), sc) <= 1e-8 * sc.cwiseAbs().maxCoeff());

  // Split accumulation merged in any order, also through pack/unpack.
  AggregateSums a(5), b(5), all(5);
  for (std::uint32_t i = 0; i < 123; ++i) {
    (i % 3 == 0 ? a : b).add_row(side.row(i));
    all.add_row(side.row(i));
  }
  AggregateSums ab = AggregateSums::unpack(b.pack(), 5);
  ab.merge(AggregateSums::unpack(a.pack(), 5));
  CHECK(ab.values().first == all.values().first);
  CHECK(ab.values().second == all.values().second);
  CHECK(all.values().first == sum);
  CHECK(all.values().second == scatter);

  LatentMatrix one(Side::kUser, 1, 2);
  one.row(0)[0] = 3.0;
  one.row(0)[1] = -2.0;
  one.recompute_aggregates();
  CHECK(one.agg_scatter() == SquareMatrix(2, {9.0, -6.0, -6.0, 4.0}));
}

TEST_CASE("predict and rmse") {
  CHECK(predict(std::vector{1.0, 0.0}, std::vector{0.0, 1.0}, 0.0) == 0.0);
  CHECK(predict(std::vector{1.0, 2.0}, std::vector{3.0, 4.0}, 0.0) == 11.0);
  CHECK(predict(std::vector{0.0, 0.0}, std::vector{0.0, 0.0}, 3.5) == 3.5);
  CHECK(rmse(std::vector{1.0, 2.0}, std::vector{1.0, 2.0}) == 0.0);
  CHECK(rmse(std::vector{1.0, 3.0}, std::vector{2.0, 2.0}) == 1.0);
  CHECK_THROWS_AS(rmse(std::vector{1.0}, std::vector{1.0, 2.0}), Error);
  CHECK_THROWS_AS(rmse(std::vector<double>{}, std::vector<double>{}), Error);
  try {
    rmse(std::vector<double>{}, std::vector<double>{});
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kEmpty);
  }

  std::mt19937_64 gen(1);
  std::uniform_real_distribution<double> u(0, 5);
  std::vector<double> p(1000), t(1000);
  for (int i = 0; i < 1000; ++i) p[i] = u(gen), t[i] = u(gen);
  long double acc = 0;
  for (int i = 0; i < 1000; ++i) acc += (long double)(p[i] - t[i]) * (p[i] - t[i]);
  CHECK(std::abs(rmse(p, t) - double(std::sqrt(acc / 1000))) <= 1e-12);
}

}
