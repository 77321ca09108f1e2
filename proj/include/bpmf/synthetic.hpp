// Copyright 2026 The bpmf-dist Authors
// SPDX-License-Identifier: Apache-2.0

// Generators for planted test problems.

#pragma once

#include <cstdint>
#include <vector>

#include "bpmf/ratings.hpp"

namespace bpmf {

struct PlantedOptions {
  std::uint32_t users = 100;
  std::uint32_t movies = 80;
  std::uint32_t rank = 3;
  double density = 0.1;   // probability that a (user, movie) pair is observed
  double noise_sd = 0.1;  // Gaussian rating noise
  double offset = 0.0;    // added to every rating
  std::uint64_t seed = 1;
};

struct PlantedData {
  SparseRatings ratings;
  std::uint32_t rank = 0;
  std::vector<double> user_factors;   // users x rank, row-major
  std::vector<double> movie_factors;  // movies x rank, row-major
};

/// Ratings r = u.v + offset + noise, with factor entries ~ N(0, 1/sqrt(rank))
/// so the noiseless part has unit variance.
PlantedData generate_planted(const PlantedOptions& options);

struct BlockOptions {
  std::uint32_t users = 200;
  std::uint32_t movies = 160;
  std::uint32_t blocks = 4;
  double in_block_density = 0.2;
  double off_block_density = 0.0;
  bool shuffle = true;  // relabel users and movies randomly
  std::uint64_t seed = 1;
};

struct BlockData {
  SparseRatings ratings;
  std::vector<std::uint32_t> user_block;   // planted block of each (shuffled) user
  std::vector<std::uint32_t> movie_block;  // planted block of each (shuffled) movie
};

/// Block-diagonal sparsity pattern, optionally with off-block noise and with
/// rows/columns shuffled to hide the structure.
BlockData generate_blocks(const BlockOptions& options);

}  // namespace bpmf
