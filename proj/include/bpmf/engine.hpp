// Copyright 2026 The bpmf-dist Authors
// SPDX-License-Identifier: Apache-2.0

// Command-line orchestration: load -> split -> plan -> run -> write outputs.

#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "bpmf/chain.hpp"
#include "bpmf/inproc_backend.hpp"
#include "bpmf/partitioner.hpp"
#include "bpmf/ratings.hpp"
#include "bpmf/transport.hpp"

namespace bpmf {

enum class ExitCode : int {
  kOk = 0,
  kConfig = 1,
  kData = 2,
  kTransport = 3,
  kInternal = 4,
  kInterrupted = 130,  // stopped by a signal; final checkpoint written
};

ExitCode exit_code_for(ErrorKind kind);

struct RunConfig {
  std::string train;
  std::string format = "mm";  // mm | csv
  std::string csv_delimiter = ",";
  bool csv_header = true;
  std::string user_column = "userId";
  std::string movie_column = "movieId";
  std::string rating_column = "rating";
  double test_fraction = 0.2;
  bool strict_split = false;
  SamplerConfig sampler;
  std::uint32_t workers = 1;
  std::uint32_t nodes = 1;
  std::uint32_t node_id = 0;
  std::string backend = "inproc";  // inproc | tcp
  std::vector<std::string> peers;
  SendPolicy policy = SendPolicy::buffered(64);
  std::string out = "bpmf-out";
  std::uint32_t checkpoint_every = 0;
  std::string resume;
  bool reorder = true;
  double timeout_s = 60.0;
  std::string plan_in;
  bool calibrate = false;
  std::uint32_t latency_us = 0;  // inproc only: injected per-write latency

  /// Throws kInvalidArgument on inconsistent settings.
  void validate() const;
  bool operator==(const RunConfig&) const = default;
};

/// Parses flags (and BPMF_* environment variables for flags not given).
/// Returns nullopt after printing help. Throws Error(kInvalidArgument) on bad
/// flags.
std::optional<RunConfig> parse_args(const std::vector<std::string>& args);
/// Flags that parse back into `config`.
std::vector<std::string> to_args(const RunConfig& config);
std::string usage();

/// Everything derived from the input before the chain starts.
struct PreparedData {
  SparseRatings ratings;  // as loaded
  RatingsSplit split;     // original labels
  SparseRatings pattern;  // train plus test nonzeros
  PartitionPlan plan;
  SparseRatings train;       // permuted labels
  std::vector<Rating> test;  // permuted labels, same order as split.test
  std::uint64_t digest = 0;
  std::optional<IdMap> users, movies;

  ChainInputs inputs() const { return {&train, test, &plan, digest}; }
};

/// Splits, plans and relabels. The result must stay where it is while a
/// chain runs on inputs().
std::unique_ptr<PreparedData> prepare_data(SparseRatings ratings, double test_fraction, std::uint64_t split_seed,
                                           const PlanOptions& plan_options, const SplitOptions& split_options = {});

struct ClusterOptions {
  std::uint32_t nodes = 1;
  std::size_t workers = 1;
  SendPolicy policy = SendPolicy::buffered(64);
  std::chrono::microseconds latency{0};
  FaultHook fault;
  std::chrono::milliseconds timeout{60000};
  CostModel cost;
};

/// Runs every node of an in-process cluster on its own thread. `hooks` go to
/// node 0; other nodes share its stop predicate. Rethrows the first node
/// failure after all nodes have stopped.
std::vector<PosteriorResult> run_local_cluster(const SamplerConfig& config, const ChainInputs& inputs,
                                               const ClusterOptions& options, const ChainHooks& hooks = {},
                                               const CheckpointState* resume = nullptr);

/// Full pipeline for one process. Returns the exit code; diagnostics go to
/// stderr.
int run_engine(const RunConfig& config);
int cli_main(int argc, char** argv);

}  // namespace bpmf
