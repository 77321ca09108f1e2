// Copyright 2026 The bpmf-dist Authors
// SPDX-License-Identifier: Apache-2.0

#include "bpmf/sampler.hpp"

#include <cmath>

#include <tbb/parallel_for.h>

#include "bpmf/distributions.hpp"
#include "bpmf/error.hpp"
#include "bpmf/exact_sum.hpp"

namespace bpmf {

// --- LatentMatrix ------------------------------------------------------------

LatentMatrix::LatentMatrix(Side side, std::uint32_t rows, std::size_t k)
    : side_(side), rows_(rows), k_(k), values_(std::size_t(rows) * k, 0.0), agg_sum_(k, 0.0), agg_scatter_(k) {}

void LatentMatrix::set_aggregates(Vector sum, SquareMatrix scatter) {
  if (sum.size() != k_ || scatter.order() != k_) fail(ErrorKind::kLengthMismatch, "aggregate dimension");
  agg_sum_ = std::move(sum);
  agg_scatter_ = std::move(scatter);
}

void LatentMatrix::recompute_aggregates() {
  AggregateSums sums(k_);
  for (std::uint32_t i = 0; i < rows_; ++i) sums.add_row(row(i));
  auto [s, m] = sums.values();
  set_aggregates(std::move(s), std::move(m));
}

void AggregateSums::add_row(std::span<const double> x) {
  const std::size_t k = sum.size();
  std::size_t t = 0;
  for (std::size_t a = 0; a < k; ++a) {
    sum.add(a, x[a]);
    for (std::size_t b = a; b < k; ++b) scatter.add(t++, x[a] * x[b]);
  }
}

void AggregateSums::merge(const AggregateSums& other) {
  sum.merge(other.sum);
  scatter.merge(other.scatter);
}

std::vector<double> AggregateSums::pack() const {
  std::vector<double> out;
  auto put = [&](const ExactSumVector& v) {
    for (std::size_t i = 0; i < v.size(); ++i) {
      const auto p = v[i].partials();
      out.push_back(static_cast<double>(p.size()));
      out.insert(out.end(), p.begin(), p.end());
    }
  };
  put(sum);
  put(scatter);
  return out;
}

AggregateSums AggregateSums::unpack(std::span<const double> packed, std::size_t k) {
  AggregateSums out(k);
  std::size_t pos = 0;
  auto take = [&](ExactSumVector& v) {
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (pos >= packed.size()) fail(ErrorKind::kParseError, "truncated aggregate partials");
      const auto n = static_cast<std::size_t>(packed[pos++]);
      if (pos + n > packed.size()) fail(ErrorKind::kParseError, "truncated aggregate partials");
      v[i] = ExactSum::from_partials(packed.subspan(pos, n));
      pos += n;
    }
  };
  take(out.sum);
  take(out.scatter);
  if (pos != packed.size()) fail(ErrorKind::kParseError, "trailing aggregate partials");
  return out;
}

std::pair<Vector, SquareMatrix> AggregateSums::values() const {
  const std::size_t k = sum.size();
  const auto c = scatter.values();
  SquareMatrix m(k);
  std::size_t t = 0;
  for (std::size_t a = 0; a < k; ++a)
    for (std::size_t b = a; b < k; ++b) {
      m(a, b) = c[t];
      m(b, a) = c[t];
      ++t;
    }
  return {sum.values(), std::move(m)};
}

// --- hyperparameters ---------------------------------------------------------

HyperParams HyperParams::from(Vector mu, SquareMatrix lambda) {
  HyperParams h;
  h.lambda_chol = cholesky(lambda);
  h.mu = std::move(mu);
  h.lambda = std::move(lambda);
  return h;
}

NwPrior NwPrior::defaults(std::size_t k) {
  NwPrior p;
  p.mu0.assign(k, 0.0);
  p.beta0 = 2.0;
  p.nu0 = static_cast<double>(k);
  p.w0 = SquareMatrix::identity(k);
  return p;
}

void NwPrior::validate() const {
  const std::size_t k = mu0.size();
  if (k == 0 || w0.order() != k) fail(ErrorKind::kInvalidArgument, "prior dimension mismatch");
  if (!(beta0 > 0.0)) fail(ErrorKind::kInvalidArgument, "beta0 must be positive");
  if (!(nu0 >= static_cast<double>(k))) fail(ErrorKind::kBadDegreesOfFreedom, "nu0 must be at least K");
  (void)cholesky(w0);
}

NwPosterior nw_posterior(std::size_t n, std::span<const double> sum, const SquareMatrix& scatter,
                         const NwPrior& prior) {
  const std::size_t k = prior.mu0.size();
  if (sum.size() != k || scatter.order() != k) fail(ErrorKind::kLengthMismatch, "aggregate dimension");
  NwPosterior post;
  const double nd = static_cast<double>(n);
  post.beta = prior.beta0 + nd;
  post.nu = prior.nu0 + nd;
  post.mu.resize(k);
  for (std::size_t a = 0; a < k; ++a) post.mu[a] = (prior.beta0 * prior.mu0[a] + sum[a]) / post.beta;

  post.w_inv = spd_inverse(prior.w0);
  if (n > 0) {
    Vector mean(k), diff(k);
    for (std::size_t a = 0; a < k; ++a) {
      mean[a] = sum[a] / nd;
      diff[a] = mean[a] - prior.mu0[a];
    }
    // n * S = scatter - n * mean * mean^T
    const double shrink = prior.beta0 * nd / post.beta;
    for (std::size_t a = 0; a < k; ++a)
      for (std::size_t b = 0; b <= a; ++b) {
        const double ns = scatter(a, b) - nd * mean[a] * mean[b];
        const double v = post.w_inv(a, b) + ns + shrink * diff[a] * diff[b];
        post.w_inv(a, b) = v;
        post.w_inv(b, a) = v;
      }
  }
  post.w = spd_inverse(post.w_inv);
  return post;
}

HyperParams sample_hyper(std::size_t n, std::span<const double> sum, const SquareMatrix& scatter,
                         const NwPrior& prior, CounterRng& rng) {
  const NwPosterior post = nw_posterior(n, sum, scatter, prior);
  SquareMatrix lambda = sample_wishart(post.nu, cholesky(post.w), rng);
  SquareMatrix mu_prec_chol = cholesky(lambda);
  mu_prec_chol *= std::sqrt(post.beta);
  Vector mu = sample_mvn(post.mu, mu_prec_chol, rng);
  return HyperParams::from(std::move(mu), std::move(lambda));
}

HyperParams sample_hyper(const LatentMatrix& side, const NwPrior& prior, CounterRng& rng) {
  return sample_hyper(side.rows(), side.agg_sum(), side.agg_scatter(), prior, rng);
}

// --- item update -------------------------------------------------------------

namespace {

// Upper triangle of sum_j v_j v_j^T and sum_j (r_j - offset) v_j over a range.
void accumulate(std::span<const Entry> ratings, const LatentMatrix& others, double offset, SquareMatrix& ss,
                std::span<double> rv) {
  const std::size_t k = others.k();
  for (const Entry& e : ratings) {
    const auto v = others.row(e.index);
    const double r = e.value - offset;
    for (std::size_t a = 0; a < k; ++a) {
      const double va = v[a];
      rv[a] += r * va;
      const auto row = ss.row(a);
      for (std::size_t b = a; b < k; ++b) row[b] += va * v[b];
    }
  }
}

struct Accumulated {
  SquareMatrix precision;
  Vector rhs;
};

// P = Lambda + alpha * SS (full symmetric), rhs = Lambda mu + alpha * RV.
Accumulated finish(const SquareMatrix& ss_upper, std::span<const double> rv, const HyperParams& hyper,
                   double alpha) {
  const std::size_t k = hyper.mu.size();
  Accumulated acc{SquareMatrix(k), multiply(hyper.lambda, hyper.mu)};
  for (std::size_t a = 0; a < k; ++a) {
    acc.rhs[a] += alpha * rv[a];
    for (std::size_t b = a; b < k; ++b) {
      const double v = hyper.lambda(a, b) + alpha * ss_upper(a, b);
      acc.precision(a, b) = v;
      acc.precision(b, a) = v;
    }
  }
  return acc;
}

Accumulated accumulate_sequential(std::span<const Entry> ratings, const LatentMatrix& others,
                                  const HyperParams& hyper, double alpha, double offset) {
  const std::size_t k = others.k();
  SquareMatrix ss(k);
  Vector rv(k, 0.0);
  accumulate(ratings, others, offset, ss, rv);
  return finish(ss, rv, hyper, alpha);
}

Accumulated accumulate_chunked(std::span<const Entry> ratings, const LatentMatrix& others,
                               const HyperParams& hyper, double alpha, double offset) {
  const std::size_t k = others.k();
  const std::size_t chunks = (ratings.size() + kParallelChunk - 1) / kParallelChunk;
  std::vector<SquareMatrix> ss(chunks, SquareMatrix(k));
  std::vector<Vector> rv(chunks, Vector(k, 0.0));
  tbb::parallel_for(std::size_t(0), chunks, [&](std::size_t c) {
    const std::size_t lo = c * kParallelChunk;
    const std::size_t hi = std::min(ratings.size(), lo + kParallelChunk);
    accumulate(ratings.subspan(lo, hi - lo), others, offset, ss[c], rv[c]);
  });
  // Merge in chunk order.
  for (std::size_t c = 1; c < chunks; ++c) {
    ss[0] += ss[c];
    for (std::size_t a = 0; a < k; ++a) rv[0][a] += rv[c][a];
  }
  if (chunks == 0) return accumulate_sequential(ratings, others, hyper, alpha, offset);
  return finish(ss[0], rv[0], hyper, alpha);
}

void check_inputs(std::span<const Entry> ratings, const LatentMatrix& others, const HyperParams& hyper) {
  if (hyper.mu.size() != others.k() || hyper.lambda.order() != others.k()) {
    fail(ErrorKind::kLengthMismatch, "hyperparameter dimension does not match latent dimension");
  }
  for (const Entry& e : ratings) {
    if (e.index >= others.rows()) fail(ErrorKind::kInvalidArgument, "rating refers to a missing item");
  }
}

}  // namespace

ItemConditional item_conditional(std::span<const Entry> ratings, const LatentMatrix& others,
                                 const HyperParams& hyper, double alpha, double offset) {
  check_inputs(ratings, others, hyper);
  Accumulated acc = accumulate_sequential(ratings, others, hyper, alpha, offset);
  const SquareMatrix l = cholesky(acc.precision);
  Vector mean = tri_solve(l, acc.rhs, TriangularSide::kLower);
  tri_solve_inplace(l, mean, TriangularSide::kUpperTransposed);
  return ItemConditional{std::move(acc.precision), std::move(acc.rhs), std::move(mean)};
}

void update_item(std::span<const Entry> ratings, const LatentMatrix& others, const HyperParams& hyper,
                 double alpha, double offset, CounterRng& rng, UpdateMethod method, std::span<double> out) {
  const std::size_t k = others.k();
  if (out.size() != k) fail(ErrorKind::kLengthMismatch, "output length");
  check_inputs(ratings, others, hyper);

  SquareMatrix l;
  Vector rhs;
  switch (method) {
    case UpdateMethod::kRankOne: {
      l = hyper.lambda_chol;
      rhs = multiply(hyper.lambda, hyper.mu);
      const double scale = std::sqrt(alpha);
      Vector x(k);
      for (const Entry& e : ratings) {
        const auto v = others.row(e.index);
        const double r = alpha * (e.value - offset);
        for (std::size_t a = 0; a < k; ++a) {
          x[a] = scale * v[a];
          rhs[a] += r * v[a];
        }
        chol_rank1_update_inplace(l, x);
      }
      break;
    }
    case UpdateMethod::kSeqCholesky:
    case UpdateMethod::kParCholesky: {
      Accumulated acc = method == UpdateMethod::kSeqCholesky
                            ? accumulate_sequential(ratings, others, hyper, alpha, offset)
                            : accumulate_chunked(ratings, others, hyper, alpha, offset);
      l = cholesky(acc.precision);
      rhs = std::move(acc.rhs);
      break;
    }
  }

  tri_solve_inplace(l, rhs, TriangularSide::kLower);
  for (std::size_t a = 0; a < k; ++a) rhs[a] += rng.normal();
  tri_solve_inplace(l, rhs, TriangularSide::kUpperTransposed);
  std::copy(rhs.begin(), rhs.end(), out.begin());
}

Vector update_item(std::span<const Entry> ratings, const LatentMatrix& others, const HyperParams& hyper,
                   double alpha, double offset, CounterRng& rng, UpdateMethod method) {
  Vector out(others.k());
  update_item(ratings, others, hyper, alpha, offset, rng, method, out);
  return out;
}

double predict(std::span<const double> u_vec, std::span<const double> v_vec, double center) {
  return dot(u_vec, v_vec) + center;
}

double rmse(std::span<const double> predictions, std::span<const double> truth) {
  if (predictions.size() != truth.size()) fail(ErrorKind::kLengthMismatch, "rmse inputs differ in length");
  if (predictions.empty()) fail(ErrorKind::kEmpty, "rmse of an empty list");
  ExactSum se;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const double d = predictions[i] - truth[i];
    se.add(d * d);
  }
  return std::sqrt(se.value() / static_cast<double>(predictions.size()));
}

}  // namespace bpmf
