// Copyright 2026 The bpmf-dist Authors
// SPDX-License-Identifier: Apache-2.0

// Asynchronous item exchange between nodes. Compute workers only encode and
// enqueue; one progress agent per node performs every backend write in FIFO
// order, so per-link ordering is preserved and the phase-end marker of a
// sender always trails its items.

#pragma once

#include <chrono>
#include <compare>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include "bpmf/error.hpp"
#include "bpmf/partitioner.hpp"
#include "bpmf/wire.hpp"

namespace bpmf {

// Eager writes each item as soon as it is sent. Buffered writes once
// `capacity` items for a destination have piled up and flushes the rest at
// end_phase. Broadcast holds everything until end_phase, writes one batch per
// destination and blocks there until its writes are done.
struct SendPolicy {
  enum class Kind : std::uint8_t { kEager, kBuffered, kBroadcast };

  Kind kind = Kind::kBuffered;
  std::uint32_t capacity = 64;  // only meaningful for kBuffered

  static SendPolicy eager() { return {Kind::kEager, 1}; }
  static SendPolicy buffered(std::uint32_t capacity = 64);
  static SendPolicy broadcast() { return {Kind::kBroadcast, 1}; }

  /// "eager", "buffered", "buffered:CAP" or "broadcast".
  static SendPolicy parse(std::string_view text);
  std::string to_string() const;

  bool operator==(const SendPolicy&) const = default;
};

/// Times in seconds. compute is the span between begin_compute and
/// end_compute, comm the time the progress agent spends inside backend
/// writes, both their intersection.
struct OverlapStats {
  double compute_time = 0.0;
  double comm_time = 0.0;
  double both_time = 0.0;
  std::uint64_t bytes_sent = 0;
  std::uint64_t messages_sent = 0;   // item frames
  std::uint64_t wire_writes = 0;     // backend writes carrying items
  std::uint64_t control_writes = 0;  // markers and collectives
  double elapsed = 0.0;              // seconds since the transport started

  /// Counter differences; elapsed becomes the window length.
  OverlapStats since(const OverlapStats& earlier) const;

  double overlap_fraction() const noexcept { return comm_time > 0.0 ? both_time / comm_time : 0.0; }
};

struct WriteKey {
  NodeId dest = 0;
  Channel channel = Channel::kMovieItems;
  std::uint32_t iteration = 0;

  auto operator<=>(const WriteKey&) const = default;
};

struct WriteCount {
  std::uint64_t sends = 0;
  std::uint64_t writes = 0;
};

/// Raised by end_phase and the collectives when the deadline passes.
class TransportTimeout : public Error {
 public:
  TransportTimeout(const std::string& what, std::vector<std::pair<Channel, std::uint32_t>> missing,
                   std::vector<NodeId> missing_markers)
      : Error(ErrorKind::kTimeout, what), missing_(std::move(missing)), missing_markers_(std::move(missing_markers)) {}

  const std::vector<std::pair<Channel, std::uint32_t>>& missing() const noexcept { return missing_; }
  const std::vector<NodeId>& missing_markers() const noexcept { return missing_markers_; }

 private:
  std::vector<std::pair<Channel, std::uint32_t>> missing_;
  std::vector<NodeId> missing_markers_;
};

/// Byte mover between nodes. Implementations deliver whole frames in the
/// order they were written on each (source, dest) link.
class Backend {
 public:
  struct Callbacks {
    std::function<void(NodeId source, std::span<const std::byte> frame)> on_frame;
    std::function<void(NodeId source)> on_peer_closed;
  };

  virtual ~Backend() = default;
  virtual NodeId self() const = 0;
  virtual std::uint32_t num_nodes() const = 0;
  virtual void start(Callbacks callbacks) = 0;
  /// Blocks until the bytes are handed off. Throws Error(kDisconnected).
  virtual void write(NodeId dest, std::span<const std::byte> frames) = 0;
  virtual void close() = 0;
};

std::string_view to_string(Channel channel);

struct TransportOptions {
  SendPolicy policy;
  std::chrono::milliseconds timeout{60000};
};

class Transport {
 public:
  struct Received {
    NodeId source = 0;
    std::uint32_t index = 0;
    std::vector<double> payload;
  };

  Transport(std::unique_ptr<Backend> backend, TransportOptions options);
  ~Transport();
  Transport(const Transport&) = delete;
  Transport& operator=(const Transport&) = delete;

  NodeId self() const noexcept { return self_; }
  std::uint32_t num_nodes() const noexcept { return nodes_; }
  const TransportOptions& options() const noexcept { return options_; }

  /// Thread-safe. Encodes on the caller and applies the send policy.
  void send_item(NodeId dest, Channel channel, std::uint32_t iteration, std::uint32_t index,
                 std::span<const double> payload);

  /// Flushes residual buffers for (channel, iteration), sends end markers and
  /// waits for every peer's marker and every expected index. Returns the
  /// items received, sorted by index. Calling again returns the same items.
  std::vector<Received> end_phase(Channel channel, std::uint32_t iteration,
                                  std::span<const std::uint32_t> expected);

  /// Every node contributes one vector; result[n] is node n's contribution.
  std::vector<std::vector<double>> all_gather(Channel channel, std::uint32_t iteration,
                                              std::span<const double> local);

  /// Items go to `root`, which gets everything (its own included) sorted by
  /// index. Other nodes receive an empty list.
  std::vector<Received> gather(Channel channel, std::uint32_t iteration, std::vector<Received> local,
                               NodeId root = 0);

  void begin_compute();
  void end_compute();

  OverlapStats collect_stats() const;
  std::map<WriteKey, WriteCount> write_counts() const;

  /// Waits until every queued write has returned from the backend.
  void flush();
  void close();

 private:
  struct Job {
    NodeId dest = 0;
    std::vector<std::byte> bytes;
    std::uint64_t items = 0;
  };
  struct Pending {
    std::vector<std::byte> bytes;
    std::uint64_t items = 0;
  };
  struct Slot {
    std::map<std::pair<NodeId, std::uint32_t>, std::vector<double>> items;
    std::vector<bool> markers;
  };
  using SlotKey = std::pair<Channel, std::uint32_t>;

  void enqueue_locked(Job job);
  void agent_loop();
  void complete_collective();
  void on_frame(NodeId source, std::span<const std::byte> frame);
  void on_peer_closed(NodeId source);
  Slot& slot_locked(SlotKey key);
  void raise_pending_locked();
  void clock_advance_locked(std::chrono::steady_clock::time_point now);
  void set_compute(bool active);
  void set_comm(bool active);

  std::unique_ptr<Backend> backend_;
  TransportOptions options_;
  NodeId self_ = 0;
  std::uint32_t nodes_ = 1;

  mutable std::mutex send_mu_;
  std::condition_variable send_cv_;
  std::condition_variable drained_cv_;
  std::deque<Job> queue_;
  bool agent_busy_ = false;
  bool stopping_ = false;
  std::map<WriteKey, Pending> buffers_;
  std::map<WriteKey, WriteCount> counts_;
  OverlapStats counters_;
  std::string agent_error_;

  mutable std::mutex in_mu_;
  std::condition_variable in_cv_;
  std::map<SlotKey, Slot> slots_;
  std::map<SlotKey, std::vector<Received>> finished_;
  std::vector<Error> errors_;
  std::vector<bool> peer_closed_;

  mutable std::mutex clock_mu_;
  bool computing_ = false;
  bool communicating_ = false;
  std::chrono::steady_clock::time_point created_{};
  std::chrono::steady_clock::time_point last_{};
  double compute_s_ = 0.0, comm_s_ = 0.0, both_s_ = 0.0;

  bool closed_ = false;
  std::thread agent_;
};

}  // namespace bpmf
