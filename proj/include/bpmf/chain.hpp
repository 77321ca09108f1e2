// Copyright 2026 The bpmf-dist Authors
// SPDX-License-Identifier: Apache-2.0

// One node's share of the Gibbs chain. Per iteration:
//
//   sample (mu_V, Lambda_V) -> update owned movies -> exchange -> aggregates
//   sample (mu_U, Lambda_U) -> update owned users  -> exchange -> aggregates
//   predict owned test points -> all-gather squared errors
//
// Every random draw is keyed by (iteration, purpose, original item index) and
// every reduction is an exact sum, so the sample path does not depend on the
// number of workers, the number of nodes or the send policy.

#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "bpmf/checkpoint.hpp"
#include "bpmf/partitioner.hpp"
#include "bpmf/ratings.hpp"
#include "bpmf/sampler.hpp"
#include "bpmf/scheduler.hpp"
#include "bpmf/transport.hpp"

namespace bpmf {

inline constexpr std::uint32_t kMaxLatentDim = 1024;

struct SamplerConfig {
  std::uint32_t k = 10;
  double alpha = 2.0;  // rating noise precision
  std::uint32_t iterations = 20;
  std::uint32_t burnin = 10;
  std::uint64_t seed = 1;
  bool center = true;   // subtract the training mean
  bool clamp = false;   // clamp predictions to the training rating range
  double beta0 = 2.0;
  double nu0 = 0.0;     // 0 selects K

  /// Throws kInvalidArgument.
  void validate() const;
  NwPrior prior() const;
  /// Digest of the settings a resumed run must share with the original.
  std::uint64_t digest() const;

  bool operator==(const SamplerConfig&) const = default;
};

/// Inputs shared by every node, all in permuted labels.
struct ChainInputs {
  const SparseRatings* train = nullptr;
  std::span<const Rating> test;  // same order as the unpermuted test list
  const PartitionPlan* plan = nullptr;
  std::uint64_t data_digest = 0;
};

struct IterationRecord {
  std::uint32_t iteration = 0;  // 1-based
  double phase_u_ms = 0.0;
  double phase_v_ms = 0.0;
  double wall_ms = 0.0;  // between the stats snapshots closing this and the previous iteration
  double rmse_sample = 0.0;
  double rmse_avg = 0.0;
  double updates_per_sec = 0.0;  // (users + movies) / iteration wall time
  OverlapStats stats;            // cumulative
  OverlapStats delta;            // this iteration only
};

struct ChainHooks {
  std::function<void(const IterationRecord&)> on_iteration;
  std::function<bool()> stop_requested;
  std::uint32_t checkpoint_every = 0;
  /// Called on node 0 only, with labels already restored.
  std::function<void(const CheckpointState&)> on_checkpoint;
};

struct ChainOptions {
  std::size_t workers = 1;
  CostModel cost;
};

struct PosteriorResult {
  std::vector<IterationRecord> trace;
  std::uint32_t iterations_done = 0;
  bool stopped = false;
  bool has_state = false;  // node 0 holds the gathered state below
  CheckpointState state;   // final U, V (original labels) and averages
  OverlapStats stats;
  std::map<WriteKey, WriteCount> write_counts;  // this node's sends and wire writes
};

/// Runs this node's part of the chain; returns after the last iteration or
/// after a stop request that every node has seen. `resume` continues a chain
/// from a checkpoint taken with the same data and config digest.
PosteriorResult run_chain(const SamplerConfig& config, const ChainInputs& inputs, Transport& transport,
                          const ChainOptions& options, const ChainHooks& hooks = {},
                          const CheckpointState* resume = nullptr);

}  // namespace bpmf
