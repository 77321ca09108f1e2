// Copyright 2026 The bpmf-dist Authors
// SPDX-License-Identifier: Apache-2.0

#include "bpmf/metrics.hpp"

#include <fmt/core.h>

#include "json.hpp"

namespace bpmf {

MetricsRecord MetricsRecord::from(const IterationRecord& rec) {
  MetricsRecord m;
  m.iteration = rec.iteration;
  m.phase_u_ms = rec.phase_u_ms;
  m.phase_v_ms = rec.phase_v_ms;
  m.rmse_sample = rec.rmse_sample;
  m.rmse_avg = rec.rmse_avg;
  m.updates_per_sec = rec.updates_per_sec;
  m.wall_ms = rec.wall_ms;
  m.compute_ms = rec.delta.compute_time * 1000.0;
  m.comm_ms = rec.delta.comm_time * 1000.0;
  m.both_ms = rec.delta.both_time * 1000.0;
  m.bytes_sent = rec.delta.bytes_sent;
  m.msgs_sent = rec.delta.messages_sent;
  return m;
}

std::string csv_header() {
  return "iteration,phase_u_ms,phase_v_ms,rmse_sample,rmse_avg,updates_per_sec,comm_ms,both_ms,bytes_sent,msgs_sent";
}

std::string csv_row(const MetricsRecord& r) {
  return fmt::format("{},{:.3f},{:.3f},{:.17g},{:.17g},{:.1f},{:.3f},{:.3f},{},{}", r.iteration, r.phase_u_ms,
                     r.phase_v_ms, r.rmse_sample, r.rmse_avg, r.updates_per_sec, r.comm_ms, r.both_ms, r.bytes_sent,
                     r.msgs_sent);
}

std::string json_line(const MetricsRecord& r, std::uint32_t node) {
  nlohmann::json j = {{"event", "iteration"},      {"node", node},
                      {"iteration", r.iteration},  {"phase_u_ms", r.phase_u_ms},
                      {"phase_v_ms", r.phase_v_ms}, {"rmse_sample", r.rmse_sample},
                      {"rmse_avg", r.rmse_avg},    {"updates_per_sec", r.updates_per_sec},
                      {"wall_ms", r.wall_ms},      {"compute_ms", r.compute_ms},
                      {"comm_ms", r.comm_ms},      {"both_ms", r.both_ms},
                      {"bytes_sent", r.bytes_sent}, {"msgs_sent", r.msgs_sent}};
  return j.dump();
}

MetricsSink::MetricsSink(const std::filesystem::path& csv_path, const std::filesystem::path& log_path,
                         std::uint32_t node)
    : csv_(csv_path, std::ios::trunc), log_(log_path, std::ios::trunc), node_(node) {
  if (!csv_) fail(ErrorKind::kIoError, fmt::format("cannot write metrics to {}", csv_path.string()));
  if (!log_) fail(ErrorKind::kIoError, fmt::format("cannot write log to {}", log_path.string()));
  csv_ << csv_header() << '\n';
  csv_.flush();
  if (!csv_) fail(ErrorKind::kIoError, "metrics header write failed");
}

void MetricsSink::emit(const MetricsRecord& record) {
  csv_ << csv_row(record) << '\n';
  log_ << json_line(record, node_) << '\n';
  csv_.flush();
  log_.flush();
  if (!csv_ || !log_) fail(ErrorKind::kIoError, "metrics write failed");
}

}  // namespace bpmf
