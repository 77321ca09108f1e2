// Copyright 2026 The bpmf-dist Authors
// SPDX-License-Identifier: Apache-2.0

// Per-item kernel choice and worker load balancing. The cost of updating an
// item is modelled as a fixed cost plus a cost per rating.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace bpmf {

class SparseRatings;

enum class UpdateMethod : std::uint8_t {
  kRankOne,      // Cholesky of the prior precision, then one rank-one update per rating
  kSeqCholesky,  // accumulate the full precision, factor once
  kParCholesky,  // accumulate in fixed-size chunks on the worker pool, then factor
};

std::string_view to_string(UpdateMethod method);

struct CostModel {
  // Costs are in microseconds per item update.
  double fixed_cost = 20.0;
  double per_rating_cost = 1.0;
  std::size_t rank1_threshold = 1000;
  std::size_t parallel_threshold = 10000;

  /// Throws Error(kInvalidArgument) when a field is out of range.
  void validate() const;
  bool operator==(const CostModel&) const = default;
};

double estimate_cost(std::size_t nnz_item, const CostModel& model);

/// RankOne below rank1_threshold, ParCholesky from parallel_threshold on,
/// SeqCholesky in between.
UpdateMethod select_method(std::size_t nnz_item, const CostModel& model);

/// Longest-processing-time greedy: items sorted by decreasing cost (ties by
/// index) go to the least loaded group (ties by group index). Always returns
/// num_workers groups, each sorted by item index; some may be empty.
std::vector<std::vector<std::uint32_t>> build_task_groups(std::span<const double> item_costs,
                                                          std::size_t num_workers);

// --- calibration -------------------------------------------------------------

struct TimingSample {
  UpdateMethod method = UpdateMethod::kSeqCholesky;
  std::size_t nnz = 0;
  double mean_us = 0.0;
  double cv = 0.0;  // coefficient of variation over repeats
};

struct CalibrationReport {
  CostModel model;
  bool fallback = false;
  std::string reason;
  std::vector<TimingSample> samples;
  // Filled by calibrate(): items per method on each side under `model`.
  std::size_t users_per_method[3] = {0, 0, 0};
  std::size_t movies_per_method[3] = {0, 0, 0};

  /// "key=value" lines, one per field plus one per timing sample.
  std::string to_text() const;
};

/// Returns repeated timings, in seconds, of one item update with `nnz` ratings.
using UpdateTimer = std::function<std::vector<double>(UpdateMethod method, std::size_t nnz)>;

struct CalibrationOptions {
  std::vector<std::size_t> grid = {1, 10, 100, 1000, 10000};
  std::size_t repeats = 5;
  double max_cv = 0.5;
  std::uint64_t seed = 7;
};

/// Weighted (relative-error) least squares fit of t = c0 + c1 * nnz over the
/// fastest method at each grid point; thresholds are placed at the measured
/// crossings. Falls back to CostModel{} when any sample's CV exceeds max_cv
/// or the fit is degenerate.
CalibrationReport fit_cost_model(std::span<const TimingSample> samples, const CalibrationOptions& options);

CalibrationReport calibrate_with_timer(const UpdateTimer& timer, const CalibrationOptions& options);

/// Times synthetic K-dimensional updates on this machine and reports how many
/// items of `ratings` each method would then handle.
CalibrationReport calibrate(const SparseRatings& ratings, std::size_t k, const CalibrationOptions& options = {});

}  // namespace bpmf
