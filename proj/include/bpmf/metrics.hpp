// Copyright 2026 The bpmf-dist Authors
// SPDX-License-Identifier: Apache-2.0

// Per-iteration metrics as CSV rows and as JSON log lines. The CSV schema is
// fixed:
//
//   iteration,phase_u_ms,phase_v_ms,rmse_sample,rmse_avg,updates_per_sec,
//   comm_ms,both_ms,bytes_sent,msgs_sent
//
// Communication columns are per-iteration deltas. RMSEs print with 17
// significant digits so traces compare exactly.

#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>

#include "bpmf/chain.hpp"

namespace bpmf {

struct MetricsRecord {
  std::uint32_t iteration = 0;
  double phase_u_ms = 0.0;
  double phase_v_ms = 0.0;
  double rmse_sample = 0.0;
  double rmse_avg = 0.0;
  double updates_per_sec = 0.0;
  double wall_ms = 0.0;
  double compute_ms = 0.0;
  double comm_ms = 0.0;
  double both_ms = 0.0;
  std::uint64_t bytes_sent = 0;
  std::uint64_t msgs_sent = 0;

  static MetricsRecord from(const IterationRecord& rec);
};

std::string csv_header();
std::string csv_row(const MetricsRecord& record);
std::string json_line(const MetricsRecord& record, std::uint32_t node);

/// Writes the CSV header on construction; an empty run leaves a header-only
/// file. Throws Error(kIoError) when a write fails.
class MetricsSink {
 public:
  MetricsSink(const std::filesystem::path& csv_path, const std::filesystem::path& log_path, std::uint32_t node = 0);

  void emit(const MetricsRecord& record);

 private:
  std::ofstream csv_;
  std::ofstream log_;
  std::uint32_t node_;
};

}  // namespace bpmf
