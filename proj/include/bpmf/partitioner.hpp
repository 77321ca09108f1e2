// Copyright 2026 The bpmf-dist Authors
// SPDX-License-Identifier: Apache-2.0

// Offline planning: reorder R for locality, cut U and V into contiguous
// per-node ranges of balanced cost, and derive which nodes need each item.

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "bpmf/ratings.hpp"
#include "bpmf/scheduler.hpp"

namespace bpmf {

using NodeId = std::uint32_t;

/// Half-open index interval [begin, end).
struct Range {
  std::uint32_t begin = 0;
  std::uint32_t end = 0;

  std::uint32_t size() const noexcept { return end - begin; }
  bool contains(std::uint32_t i) const noexcept { return i >= begin && i < end; }
  bool operator==(const Range&) const = default;
};

/// Mean distance between consecutive nonzero indices, over every row and
/// every column of the matrix as currently labelled. Lower is more local.
double locality_score(const SparseRatings& ratings);

struct ReorderOptions {
  std::size_t leaf_size = 32;     // stop bisecting below this many rows + columns
  std::size_t max_depth = 16;
  std::size_t power_iterations = 120;
};

struct Reordering {
  Permutation rows;
  Permutation cols;
  std::string method;  // "identity", "bisection" or "degree"
  double identity_score = 0.0;
  double score = 0.0;
};

/// Recursive spectral bisection of the bipartite row/column graph: each level
/// orders rows and columns by the second singular vectors of the normalized
/// pattern and splits at the median. A degree sort is the simpler fallback;
/// whichever of {identity, bisection, degree} has the lowest locality score
/// wins, identity on ties, so the score never gets worse.
Reordering reorder_for_locality(const SparseRatings& ratings, const ReorderOptions& options = {});

/// Contiguous split of items into num_nodes non-empty ranges minimizing the
/// largest range cost (exact, O(num_nodes * n) dynamic program).
/// Throws Error(kMoreNodesThanItems).
std::vector<Range> partition_items(std::span<const double> item_costs, std::size_t num_nodes);

NodeId owner_of(std::span<const Range> ranges, std::uint32_t item);

struct CommPlan {
  // destinations[i]: sorted nodes other than i's owner that need item i.
  std::vector<std::vector<NodeId>> user_destinations;
  std::vector<std::vector<NodeId>> movie_destinations;
  std::size_t user_volume = 0;   // sum of |user_destinations[i]|
  std::size_t movie_volume = 0;  // sum of |movie_destinations[i]|

  std::size_t volume() const noexcept { return user_volume + movie_volume; }
};

/// Movie m goes to node n iff some user owned by n has a nonzero for m in
/// `pattern`, and symmetrically for users.
CommPlan build_comm_plan(const SparseRatings& pattern, std::span<const Range> ranges_u,
                         std::span<const Range> ranges_v);

struct PartitionPlan {
  std::size_t num_nodes = 1;
  Permutation row_perm;  // users: new -> old
  Permutation col_perm;  // movies: new -> old
  std::vector<Range> node_ranges_u;
  std::vector<Range> node_ranges_v;
  CommPlan comm;
  std::vector<double> predicted_node_cost_u;
  std::vector<double> predicted_node_cost_v;

  NodeId user_owner(std::uint32_t u) const { return owner_of(node_ranges_u, u); }
  NodeId movie_owner(std::uint32_t m) const { return owner_of(node_ranges_v, m); }
  /// Items this node receives from others during a phase, ascending.
  std::vector<std::uint32_t> expected_users(NodeId node) const;
  std::vector<std::uint32_t> expected_movies(NodeId node) const;
};

struct PlanOptions {
  std::size_t num_nodes = 1;
  bool reorder = true;
  CostModel cost;
  ReorderOptions reorder_options;
};

/// Full planning pipeline on original labels: reorder on `train`, balance the
/// permuted per-item costs, then build the comm plan from `pattern` (the
/// union of train and test nonzeros) in permuted labels.
PartitionPlan make_plan(const SparseRatings& train, const SparseRatings& pattern, const PlanOptions& options);

/// Plan with the given permutations and ranges; comm plan and costs are
/// rebuilt from the data (used on import).
PartitionPlan assemble_plan(const SparseRatings& train, const SparseRatings& pattern, Permutation rows,
                            Permutation cols, std::vector<Range> ranges_u, std::vector<Range> ranges_v,
                            const CostModel& cost);

/// JSON document with permutations, ranges, volumes and predicted costs.
std::string plan_to_json(const PartitionPlan& plan);
void write_plan(const PartitionPlan& plan, const std::filesystem::path& path);
PartitionPlan read_plan(const std::filesystem::path& path, const SparseRatings& train, const SparseRatings& pattern,
                        const CostModel& cost);

}  // namespace bpmf
