// Copyright 2026 The bpmf-dist Authors
// SPDX-License-Identifier: Apache-2.0

// Versioned binary snapshot of a chain after a completed iteration. The
// layout is documented in docs/checkpoint-format.md. Items are stored in
// original (unpermuted) labels so a checkpoint is independent of the
// partition plan and the node count.

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "bpmf/ratings.hpp"
#include "bpmf/sampler.hpp"

namespace bpmf {

struct CheckpointState {
  std::uint32_t k = 0;
  std::uint32_t num_users = 0;
  std::uint32_t num_movies = 0;
  std::uint32_t iteration = 0;  // iterations completed
  std::uint32_t samples = 0;    // post-burn-in samples in the running average
  std::uint64_t seed = 0;
  std::uint64_t data_digest = 0;
  std::uint64_t config_digest = 0;
  std::vector<double> u;  // num_users x k, row-major
  std::vector<double> v;  // num_movies x k
  Vector mu_u, mu_v;
  SquareMatrix lambda_u, lambda_v;
  std::vector<double> avg_predictions;  // in test-set order

  bool operator==(const CheckpointState&) const = default;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Writes to a temporary file and renames, so an existing checkpoint stays
/// intact if writing fails.
void write_checkpoint(const CheckpointState& state, const std::filesystem::path& path);
/// Throws kIoError, kParseError (bad magic / version / truncation) or
/// kChecksumFailure.
CheckpointState read_checkpoint(const std::filesystem::path& path);

/// Order-sensitive digest of the train triples and test points.
std::uint64_t data_digest(const SparseRatings& train, std::span<const Rating> test);

}  // namespace bpmf
