// Copyright 2026 The bpmf-dist Authors
// SPDX-License-Identifier: Apache-2.0

// The observed rating matrix R, indexed both by user (row) and by movie
// (column). The movie phase walks movie_ratings(), the user phase walks
// user_ratings().

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace bpmf {

struct Rating {
  std::uint32_t user = 0;
  std::uint32_t movie = 0;
  double value = 0.0;

  bool operator==(const Rating&) const = default;
};

/// One nonzero seen from one side: the index on the opposite side and the value.
struct Entry {
  std::uint32_t index = 0;
  double value = 0.0;
};

/// A bijection on [0, n), stored both ways. `new_to_old[i]` is the original
/// index placed at position i.
class Permutation {
 public:
  Permutation() = default;
  static Permutation identity(std::size_t n);
  /// Throws Error(kInvalidArgument) unless `new_to_old` is a bijection.
  static Permutation from_order(std::vector<std::uint32_t> new_to_old);

  std::size_t size() const noexcept { return new_to_old_.size(); }
  std::uint32_t to_old(std::uint32_t i) const { return new_to_old_[i]; }
  std::uint32_t to_new(std::uint32_t i) const { return old_to_new_[i]; }
  const std::vector<std::uint32_t>& order() const noexcept { return new_to_old_; }
  bool is_identity() const;
  Permutation inverse() const;

  bool operator==(const Permutation&) const = default;

 private:
  std::vector<std::uint32_t> new_to_old_;
  std::vector<std::uint32_t> old_to_new_;
};

class SparseRatings {
 public:
  SparseRatings() = default;

  /// Validates indices, finiteness and uniqueness of (user, movie) pairs.
  static SparseRatings from_triples(std::uint32_t num_users, std::uint32_t num_movies,
                                    std::vector<Rating> triples);

  std::uint32_t num_users() const noexcept { return num_users_; }
  std::uint32_t num_movies() const noexcept { return num_movies_; }
  std::size_t nnz() const noexcept { return by_user_.size(); }
  double global_mean() const noexcept { return global_mean_; }
  double min_rating() const noexcept { return min_rating_; }
  double max_rating() const noexcept { return max_rating_; }

  std::span<const Entry> user_ratings(std::uint32_t user) const {
    return {by_user_.data() + user_offsets_[user], by_user_.data() + user_offsets_[user + 1]};
  }
  std::span<const Entry> movie_ratings(std::uint32_t movie) const {
    return {by_movie_.data() + movie_offsets_[movie], by_movie_.data() + movie_offsets_[movie + 1]};
  }
  std::size_t user_degree(std::uint32_t user) const {
    return user_offsets_[user + 1] - user_offsets_[user];
  }
  std::size_t movie_degree(std::uint32_t movie) const {
    return movie_offsets_[movie + 1] - movie_offsets_[movie];
  }

  /// All nonzeros ordered by (user, movie).
  std::vector<Rating> triples() const;
  /// Same nonzeros flattened from the by-movie index, ordered by (user, movie).
  std::vector<Rating> triples_from_movie_index() const;

  /// Relabels users and movies: new user i is old user rows.to_old(i).
  SparseRatings permuted(const Permutation& rows, const Permutation& cols) const;

 private:
  std::uint32_t num_users_ = 0;
  std::uint32_t num_movies_ = 0;
  double global_mean_ = 0.0;
  double min_rating_ = 0.0;
  double max_rating_ = 0.0;
  std::vector<std::size_t> user_offsets_{0};
  std::vector<Entry> by_user_;
  std::vector<std::size_t> movie_offsets_{0};
  std::vector<Entry> by_movie_;
};

struct RatingsSplit {
  SparseRatings train;
  std::vector<Rating> test;  // ordered by (user, movie)
};

// --- MatrixMarket ----------------------------------------------------------

/// Reads "%%MatrixMarket matrix coordinate {real|integer} general".
/// Rows are users, columns are movies, indices are 1-based on disk.
SparseRatings load_matrix_market(const std::filesystem::path& path);
void save_matrix_market(const SparseRatings& ratings, const std::filesystem::path& path);
void save_matrix_market(std::uint32_t num_users, std::uint32_t num_movies,
                        std::span<const Rating> triples, const std::filesystem::path& path);

// --- CSV -------------------------------------------------------------------

struct CsvSchema {
  std::string delimiter = ",";
  bool has_header = true;
  // Used when has_header: the header must contain these names.
  std::string user_column = "userId";
  std::string movie_column = "movieId";
  std::string rating_column = "rating";
  // Used when !has_header.
  std::size_t user_position = 0;
  std::size_t movie_position = 1;
  std::size_t rating_position = 2;

  /// ml-20m / ml-latest "ratings.csv".
  static CsvSchema movielens_csv();
  /// ml-100k "u.data": tab separated, no header.
  static CsvSchema movielens_100k();
};

/// External id for each dense index.
struct IdMap {
  std::vector<std::string> external;
};

struct LoadedRatings {
  SparseRatings ratings;
  IdMap users;
  IdMap movies;
};

/// External ids are remapped to dense indices in ascending order (numeric
/// when every id is an integer, lexicographic otherwise).
LoadedRatings load_ratings_csv(const std::filesystem::path& path, const CsvSchema& schema);

/// Two-column CSV sidecar "external_id,index".
void write_id_map(const IdMap& map, const std::filesystem::path& path);
IdMap read_id_map(const std::filesystem::path& path);

// --- Train/test split ------------------------------------------------------

struct SplitOptions {
  // When set, a split that cannot keep one training rating for every user and
  // movie raises TooSparse instead of falling back.
  bool strict_coverage = false;
};

/// Holds out round(test_fraction * nnz) ratings picked by a seeded shuffle.
/// First pass only removes ratings whose user and movie keep another training
/// rating; if that is not enough, the fallback pass takes the remaining
/// shuffled ratings regardless of coverage.
RatingsSplit split_train_test(const SparseRatings& ratings, double test_fraction, std::uint64_t seed,
                              const SplitOptions& options = {});

}  // namespace bpmf
