// Copyright 2026 The bpmf-dist Authors
// SPDX-License-Identifier: Apache-2.0

// In-process fabric for simulating several nodes in one process. Frames are
// delivered synchronously on the writer's thread, which keeps link order and
// makes runs reproducible. Latency and faults can be injected per frame.

#pragma once

#include <atomic>
#include <chrono>
#include <functional>
#include <memory>
#include <mutex>
#include <vector>

#include "bpmf/transport.hpp"

namespace bpmf {

enum class FaultAction { kDeliver, kDrop, kCorrupt, kDuplicate };

using FaultHook = std::function<FaultAction(NodeId source, NodeId dest, const wire::FrameHeader& header)>;

class InProcessFabric : public std::enable_shared_from_this<InProcessFabric> {
 public:
  static std::shared_ptr<InProcessFabric> create(std::uint32_t num_nodes);

  std::uint32_t num_nodes() const noexcept { return static_cast<std::uint32_t>(nodes_.size()); }
  std::unique_ptr<Backend> endpoint(NodeId id);

  /// Sleep applied to every backend write, however many frames it holds.
  void set_write_latency(std::chrono::microseconds latency) { latency_us_ = latency.count(); }
  void set_fault_hook(FaultHook hook);

  std::uint64_t frames_delivered() const noexcept { return delivered_.load(); }

 private:
  friend class InProcessEndpoint;
  explicit InProcessFabric(std::uint32_t num_nodes);

  struct NodeState {
    std::mutex mu;
    bool started = false;
    bool closed = false;
    Backend::Callbacks callbacks;
    std::vector<std::pair<NodeId, std::vector<std::byte>>> pending;  // before start
  };

  void start(NodeId id, Backend::Callbacks callbacks);
  void write(NodeId source, NodeId dest, std::span<const std::byte> frames);
  void close(NodeId id);

  std::vector<std::unique_ptr<NodeState>> nodes_;
  std::mutex hook_mu_;
  FaultHook hook_;
  std::atomic<long long> latency_us_{0};
  std::atomic<std::uint64_t> delivered_{0};
};

}  // namespace bpmf
