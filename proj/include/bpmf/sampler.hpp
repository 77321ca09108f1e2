// Copyright 2026 The bpmf-dist Authors
// SPDX-License-Identifier: Apache-2.0

// Conditional draws of the Gibbs sampler: Normal-Wishart hyperparameters for
// each side and the Gaussian conditional of each item vector.
//
// Model: r_ij ~ N(u_i . v_j + center, 1/alpha), u_i ~ N(mu_U, Lambda_U^{-1}),
// (mu_U, Lambda_U) ~ NW(mu0, beta0, W0, nu0); same for the movie side.

#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "bpmf/exact_sum.hpp"
#include "bpmf/linalg.hpp"
#include "bpmf/ratings.hpp"
#include "bpmf/rng.hpp"
#include "bpmf/scheduler.hpp"

namespace bpmf {

enum class Side : std::uint8_t { kMovie = 0, kUser = 1 };

inline Side opposite(Side s) { return s == Side::kMovie ? Side::kUser : Side::kMovie; }
inline Purpose update_purpose(Side s) { return s == Side::kMovie ? Purpose::kMovieUpdate : Purpose::kUserUpdate; }
inline Purpose hyper_purpose(Side s) { return s == Side::kMovie ? Purpose::kMovieHyper : Purpose::kUserHyper; }

/// U (users x K) or V (movies x K) with the running sum and scatter of its
/// rows. Rows are stored contiguously.
class LatentMatrix {
 public:
  LatentMatrix() = default;
  LatentMatrix(Side side, std::uint32_t rows, std::size_t k);

  Side side() const noexcept { return side_; }
  std::uint32_t rows() const noexcept { return rows_; }
  std::size_t k() const noexcept { return k_; }

  std::span<double> row(std::uint32_t i) { return {values_.data() + std::size_t(i) * k_, k_}; }
  std::span<const double> row(std::uint32_t i) const { return {values_.data() + std::size_t(i) * k_, k_}; }
  std::span<const double> values() const noexcept { return values_; }
  std::span<double> values() noexcept { return values_; }

  const Vector& agg_sum() const noexcept { return agg_sum_; }
  const SquareMatrix& agg_scatter() const noexcept { return agg_scatter_; }
  void set_aggregates(Vector sum, SquareMatrix scatter);
  /// Rebuilds agg_sum / agg_scatter from every row with exact summation.
  void recompute_aggregates();

 private:
  Side side_ = Side::kMovie;
  std::uint32_t rows_ = 0;
  std::size_t k_ = 0;
  std::vector<double> values_;
  Vector agg_sum_;
  SquareMatrix agg_scatter_;
};

/// Exact accumulators behind LatentMatrix aggregates: K sums and the
/// K(K+1)/2 upper-triangle scatter entries, row-major.
struct AggregateSums {
  ExactSumVector sum;
  ExactSumVector scatter;

  explicit AggregateSums(std::size_t k = 0) : sum(k), scatter(k * (k + 1) / 2) {}
  void add_row(std::span<const double> x);
  void merge(const AggregateSums& other);
  /// Every partial, length-prefixed per component, for shipping to peers.
  std::vector<double> pack() const;
  static AggregateSums unpack(std::span<const double> packed, std::size_t k);
  /// Rounded sum vector and symmetric scatter matrix.
  std::pair<Vector, SquareMatrix> values() const;
};

struct HyperParams {
  Vector mu;
  SquareMatrix lambda;       // precision
  SquareMatrix lambda_chol;  // lower Cholesky factor of lambda

  static HyperParams from(Vector mu, SquareMatrix lambda);
};

struct NwPrior {
  Vector mu0;
  double beta0 = 2.0;
  double nu0 = 0.0;
  SquareMatrix w0;

  /// mu0 = 0, beta0 = 2, nu0 = K, W0 = I.
  static NwPrior defaults(std::size_t k);
  void validate() const;
};

/// Parameters of the Normal-Wishart posterior given n item vectors with the
/// given sum and scatter (sum of outer products).
struct NwPosterior {
  double beta = 0.0;
  double nu = 0.0;
  Vector mu;
  SquareMatrix w_inv;
  SquareMatrix w;
};

NwPosterior nw_posterior(std::size_t n, std::span<const double> sum, const SquareMatrix& scatter,
                         const NwPrior& prior);

/// Lambda ~ Wishart(nu*, W*), mu | Lambda ~ N(mu*, (beta* Lambda)^{-1}).
HyperParams sample_hyper(std::size_t n, std::span<const double> sum, const SquareMatrix& scatter,
                         const NwPrior& prior, CounterRng& rng);
HyperParams sample_hyper(const LatentMatrix& side, const NwPrior& prior, CounterRng& rng);

/// Precision P = Lambda + alpha * sum_j v_j v_j^T and
/// rhs = Lambda mu + alpha * sum_j (r_j - offset) v_j, summed in stored order.
struct ItemConditional {
  SquareMatrix precision;
  Vector rhs;
  Vector mean;  // P^{-1} rhs
};

ItemConditional item_conditional(std::span<const Entry> ratings, const LatentMatrix& others,
                                 const HyperParams& hyper, double alpha, double offset);

/// Ratings per accumulation chunk in the ParCholesky kernel. Fixed so the
/// summation order never depends on how many workers run the chunks.
inline constexpr std::size_t kParallelChunk = 256;

/// Draws one item vector from N(P^{-1} rhs, P^{-1}) as
/// L^{-T}(L^{-1} rhs + z) with L the Cholesky factor of P and z ~ N(0, I)
/// taken from `rng`. All three methods produce the same factor up to rounding.
/// ParCholesky runs its chunks on the calling TBB arena.
void update_item(std::span<const Entry> ratings, const LatentMatrix& others, const HyperParams& hyper,
                 double alpha, double offset, CounterRng& rng, UpdateMethod method, std::span<double> out);
Vector update_item(std::span<const Entry> ratings, const LatentMatrix& others, const HyperParams& hyper,
                   double alpha, double offset, CounterRng& rng, UpdateMethod method);

double predict(std::span<const double> u_vec, std::span<const double> v_vec, double center);

/// Throws kLengthMismatch / kEmpty.
double rmse(std::span<const double> predictions, std::span<const double> truth);

}  // namespace bpmf
