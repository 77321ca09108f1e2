// Copyright 2026 The bpmf-dist Authors
// SPDX-License-Identifier: Apache-2.0

#include "bpmf/transport.hpp"

#include <algorithm>
#include <charconv>

#include <fmt/core.h>

namespace bpmf {

OverlapStats OverlapStats::since(const OverlapStats& e) const {
  OverlapStats d;
  d.compute_time = compute_time - e.compute_time;
  d.comm_time = comm_time - e.comm_time;
  d.both_time = both_time - e.both_time;
  d.bytes_sent = bytes_sent - e.bytes_sent;
  d.messages_sent = messages_sent - e.messages_sent;
  d.wire_writes = wire_writes - e.wire_writes;
  d.control_writes = control_writes - e.control_writes;
  d.elapsed = elapsed - e.elapsed;
  return d;
}

SendPolicy SendPolicy::buffered(std::uint32_t capacity) {
  if (capacity == 0) fail(ErrorKind::kInvalidArgument, "buffer capacity must be at least 1");
  return {Kind::kBuffered, capacity};
}

SendPolicy SendPolicy::parse(std::string_view text) {
  if (text == "eager") return eager();
  if (text == "broadcast") return broadcast();
  if (text == "buffered") return buffered();
  constexpr std::string_view kPrefix = "buffered:";
  if (text.starts_with(kPrefix)) {
    const auto digits = text.substr(kPrefix.size());
    std::uint32_t cap = 0;
    const auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), cap);
    if (ec == std::errc() && ptr == digits.data() + digits.size() && cap >= 1) return buffered(cap);
  }
  fail(ErrorKind::kInvalidArgument, fmt::format("unknown send policy '{}' (eager, buffered:CAP, broadcast)", text));
}

std::string SendPolicy::to_string() const {
  switch (kind) {
    case Kind::kEager: return "eager";
    case Kind::kBroadcast: return "broadcast";
    case Kind::kBuffered: break;
  }
  return fmt::format("buffered:{}", capacity);
}

std::string_view to_string(Channel channel) {
  switch (channel) {
    case Channel::kMovieItems: return "movie-items";
    case Channel::kUserItems: return "user-items";
    case Channel::kMovieAggregate: return "movie-aggregate";
    case Channel::kUserAggregate: return "user-aggregate";
    case Channel::kEvaluation: return "evaluation";
    case Channel::kGatherMovies: return "gather-movies";
    case Channel::kGatherUsers: return "gather-users";
    case Channel::kGatherPredictions: return "gather-predictions";
  }
  return "unknown";
}

Transport::Transport(std::unique_ptr<Backend> backend, TransportOptions options)
    : backend_(std::move(backend)), options_(options) {
  if (!backend_) fail(ErrorKind::kInvalidArgument, "transport needs a backend");
  if (options_.policy.kind == SendPolicy::Kind::kBuffered && options_.policy.capacity == 0) {
    fail(ErrorKind::kInvalidArgument, "buffer capacity must be at least 1");
  }
  self_ = backend_->self();
  nodes_ = backend_->num_nodes();
  peer_closed_.assign(nodes_, false);
  created_ = last_ = std::chrono::steady_clock::now();
  agent_ = std::thread([this] { agent_loop(); });
  backend_->start({[this](NodeId s, std::span<const std::byte> f) { on_frame(s, f); },
                   [this](NodeId s) { on_peer_closed(s); }});
}

Transport::~Transport() {
  try {
    close();
  } catch (...) {
  }
}

void Transport::close() {
  if (closed_) return;
  closed_ = true;
  try {
    flush();
  } catch (...) {
  }
  {
    std::lock_guard lock(send_mu_);
    stopping_ = true;
  }
  send_cv_.notify_all();
  if (agent_.joinable()) agent_.join();
  backend_->close();
}

// Callers hold send_mu_.
void Transport::enqueue_locked(Job job) {
  counters_.bytes_sent += job.bytes.size();
  if (job.items > 0) {
    ++counters_.wire_writes;
  } else {
    ++counters_.control_writes;
  }
  queue_.push_back(std::move(job));
  send_cv_.notify_one();
}

void Transport::send_item(NodeId dest, Channel channel, std::uint32_t iteration, std::uint32_t index,
                          std::span<const double> payload) {
  if (dest >= nodes_ || dest == self_) {
    fail(ErrorKind::kInvalidArgument, fmt::format("node {} cannot send to node {}", self_, dest));
  }
  {
    std::lock_guard lock(in_mu_);
    if (peer_closed_[dest]) fail(ErrorKind::kDisconnected, fmt::format("node {} is disconnected", dest));
  }
  ItemMessage msg{iteration, channel, index, {payload.begin(), payload.end()}, 0};
  std::vector<std::byte> frame;
  wire::append_frame(frame, msg);

  std::lock_guard lock(send_mu_);
  if (!agent_error_.empty()) fail(ErrorKind::kTransportFailure, agent_error_);
  const WriteKey key{dest, channel, iteration};
  auto& count = counts_[key];
  ++count.sends;
  ++counters_.messages_sent;
  switch (options_.policy.kind) {
    case SendPolicy::Kind::kEager:
      ++count.writes;
      enqueue_locked({dest, std::move(frame), 1});
      return;
    case SendPolicy::Kind::kBuffered: {
      auto& buf = buffers_[key];
      buf.bytes.insert(buf.bytes.end(), frame.begin(), frame.end());
      if (++buf.items >= options_.policy.capacity) {
        ++count.writes;
        enqueue_locked({dest, std::move(buf.bytes), buf.items});
        buffers_.erase(key);
      }
      return;
    }
    case SendPolicy::Kind::kBroadcast: {
      auto& buf = buffers_[key];
      buf.bytes.insert(buf.bytes.end(), frame.begin(), frame.end());
      ++buf.items;
      return;
    }
  }
}

void Transport::agent_loop() {
  for (;;) {
    Job job;
    {
      std::unique_lock lock(send_mu_);
      send_cv_.wait(lock, [&] { return stopping_ || !queue_.empty(); });
      if (queue_.empty()) return;
      job = std::move(queue_.front());
      queue_.pop_front();
      agent_busy_ = true;
    }
    set_comm(true);
    std::string error;
    try {
      backend_->write(job.dest, job.bytes);
    } catch (const std::exception& e) {
      error = e.what();
    }
    set_comm(false);
    {
      std::lock_guard lock(send_mu_);
      agent_busy_ = false;
      if (!error.empty() && agent_error_.empty()) agent_error_ = error;
    }
    drained_cv_.notify_all();
    if (!error.empty()) in_cv_.notify_all();
  }
}

// A broadcast is a blocking collective: the caller only moves on once its own
// sends have left, so none of its communication overlaps later compute.
void Transport::complete_collective() {
  if (options_.policy.kind == SendPolicy::Kind::kBroadcast) flush();
}

void Transport::flush() {
  std::unique_lock lock(send_mu_);
  drained_cv_.wait(lock, [&] { return queue_.empty() && !agent_busy_; });
  if (!agent_error_.empty()) fail(ErrorKind::kTransportFailure, agent_error_);
}

Transport::Slot& Transport::slot_locked(SlotKey key) {
  auto& slot = slots_[key];
  if (slot.markers.empty()) slot.markers.assign(nodes_, false);
  return slot;
}

void Transport::on_frame(NodeId source, std::span<const std::byte> frame) {
  ItemMessage msg;
  try {
    msg = wire::decode_frame(frame);
  } catch (const Error& e) {
    std::lock_guard lock(in_mu_);
    if (frame.size() >= wire::kHeaderSize) {
      const auto h = wire::peek_header(frame);
      errors_.emplace_back(e.kind(), fmt::format("frame from node {} (phase {}, iteration {}, item {}): {}", source,
                                                 int(h.phase), h.iteration, h.index, e.what()));
    } else {
      errors_.emplace_back(e.kind(), fmt::format("frame from node {}: {}", source, e.what()));
    }
    in_cv_.notify_all();
    return;
  }
  std::lock_guard lock(in_mu_);
  const SlotKey key{msg.phase, msg.iteration};
  if (finished_.contains(key)) {
    errors_.emplace_back(ErrorKind::kDuplicateMessage,
                         fmt::format("late frame from node {} for finished {} iteration {} (item {})", source,
                                     to_string(msg.phase), msg.iteration, msg.index));
  } else {
    auto& slot = slot_locked(key);
    if (msg.is_marker()) {
      if (source < nodes_) slot.markers[source] = true;
    } else if (!slot.items.emplace(std::pair{source, msg.index}, std::move(msg.payload)).second) {
      errors_.emplace_back(ErrorKind::kDuplicateMessage,
                           fmt::format("duplicate item {} of {} iteration {} from node {}", msg.index,
                                       to_string(msg.phase), msg.iteration, source));
    }
  }
  in_cv_.notify_all();
}

void Transport::on_peer_closed(NodeId source) {
  {
    std::lock_guard lock(in_mu_);
    if (source < nodes_) peer_closed_[source] = true;
  }
  in_cv_.notify_all();
}

void Transport::raise_pending_locked() {
  if (!errors_.empty()) throw errors_.front();
  std::lock_guard lock(send_mu_);
  if (!agent_error_.empty()) fail(ErrorKind::kTransportFailure, agent_error_);
}

std::vector<Transport::Received> Transport::end_phase(Channel channel, std::uint32_t iteration,
                                                      std::span<const std::uint32_t> expected) {
  const SlotKey key{channel, iteration};
  {
    std::lock_guard lock(in_mu_);
    if (auto it = finished_.find(key); it != finished_.end()) return it->second;
  }
  {
    std::lock_guard lock(send_mu_);
    for (auto it = buffers_.begin(); it != buffers_.end();) {
      if (it->first.channel == channel && it->first.iteration == iteration) {
        ++counts_[it->first].writes;
        enqueue_locked({it->first.dest, std::move(it->second.bytes), it->second.items});
        it = buffers_.erase(it);
      } else {
        ++it;
      }
    }
    for (NodeId peer = 0; peer < nodes_; ++peer) {
      if (peer == self_) continue;
      ItemMessage marker{iteration, channel, kEndMarker, {}, 0};
      std::vector<std::byte> bytes;
      wire::append_frame(bytes, marker);
      enqueue_locked({peer, std::move(bytes), 0});
    }
  }

  const auto deadline = std::chrono::steady_clock::now() + options_.timeout;
  std::unique_lock lock(in_mu_);
  for (;;) {
    raise_pending_locked();
    auto& slot = slot_locked(key);
    std::vector<NodeId> waiting_on;
    for (NodeId peer = 0; peer < nodes_; ++peer) {
      if (peer != self_ && !slot.markers[peer]) waiting_on.push_back(peer);
    }
    std::vector<std::uint32_t> received;
    received.reserve(slot.items.size());
    for (const auto& [src_index, payload] : slot.items) received.push_back(src_index.second);
    std::sort(received.begin(), received.end());
    std::vector<std::pair<Channel, std::uint32_t>> missing;
    for (std::uint32_t idx : expected) {
      if (!std::binary_search(received.begin(), received.end(), idx)) missing.emplace_back(channel, idx);
    }
    if (waiting_on.empty() && missing.empty()) break;
    for (NodeId peer : waiting_on) {
      if (peer_closed_[peer]) {
        fail(ErrorKind::kDisconnected, fmt::format("node {} closed before ending {} iteration {}", peer,
                                                   to_string(channel), iteration));
      }
    }
    if (in_cv_.wait_until(lock, deadline) == std::cv_status::timeout && std::chrono::steady_clock::now() >= deadline) {
      std::string list;
      const std::size_t shown = std::min<std::size_t>(missing.size(), 20);
      for (std::size_t i = 0; i < shown; ++i) {
        list += fmt::format("{}({}, {})", i ? ", " : "", to_string(missing[i].first), missing[i].second);
      }
      if (shown < missing.size()) list += fmt::format(", ... {} more", missing.size() - shown);
      std::string markers;
      for (std::size_t i = 0; i < waiting_on.size(); ++i) markers += fmt::format("{}{}", i ? ", " : "", waiting_on[i]);
      throw TransportTimeout(fmt::format("node {} timed out ending {} iteration {}: missing items [{}]; "
                                         "no end marker from nodes [{}]",
                                         self_, to_string(channel), iteration, list, markers),
                             std::move(missing), std::move(waiting_on));
    }
  }

  auto& slot = slots_[key];
  std::vector<Received> out;
  out.reserve(slot.items.size());
  for (auto& [src_index, payload] : slot.items) out.push_back({src_index.first, src_index.second, std::move(payload)});
  std::stable_sort(out.begin(), out.end(), [](const Received& a, const Received& b) { return a.index < b.index; });
  slots_.erase(key);
  // Keep results of the last couple of iterations for idempotent re-calls.
  std::erase_if(finished_, [&](const auto& kv) { return kv.first.second + 2 < iteration; });
  finished_.emplace(key, out);
  lock.unlock();
  complete_collective();
  return out;
}

std::vector<std::vector<double>> Transport::all_gather(Channel channel, std::uint32_t iteration,
                                                       std::span<const double> local) {
  std::vector<std::vector<double>> out(nodes_);
  out[self_].assign(local.begin(), local.end());
  if (nodes_ == 1) return out;
  {
    std::lock_guard lock(send_mu_);
    for (NodeId peer = 0; peer < nodes_; ++peer) {
      if (peer == self_) continue;
      ItemMessage msg{iteration, channel, self_, {local.begin(), local.end()}, 0};
      std::vector<std::byte> bytes;
      wire::append_frame(bytes, msg);
      enqueue_locked({peer, std::move(bytes), 0});
    }
  }
  const SlotKey key{channel, iteration};
  const auto deadline = std::chrono::steady_clock::now() + options_.timeout;
  std::unique_lock lock(in_mu_);
  for (;;) {
    raise_pending_locked();
    auto& slot = slot_locked(key);
    std::vector<NodeId> waiting_on;
    for (NodeId peer = 0; peer < nodes_; ++peer) {
      if (peer != self_ && !slot.items.contains({peer, peer})) waiting_on.push_back(peer);
    }
    if (waiting_on.empty()) break;
    for (NodeId peer : waiting_on) {
      if (peer_closed_[peer]) {
        fail(ErrorKind::kDisconnected, fmt::format("node {} closed during {} iteration {}", peer, to_string(channel),
                                                   iteration));
      }
    }
    if (in_cv_.wait_until(lock, deadline) == std::cv_status::timeout && std::chrono::steady_clock::now() >= deadline) {
      std::vector<std::pair<Channel, std::uint32_t>> missing;
      std::string list;
      for (NodeId p : waiting_on) {
        missing.emplace_back(channel, p);
        list += fmt::format("{}{}", list.empty() ? "" : ", ", p);
      }
      throw TransportTimeout(fmt::format("node {} timed out in {} iteration {} waiting for nodes [{}]", self_,
                                         to_string(channel), iteration, list),
                             std::move(missing), waiting_on);
    }
  }
  auto& slot = slots_[key];
  for (auto& [src_index, payload] : slot.items) {
    if (src_index.first == src_index.second) out[src_index.first] = std::move(payload);
  }
  slots_.erase(key);
  lock.unlock();
  complete_collective();
  return out;
}

std::vector<Transport::Received> Transport::gather(Channel channel, std::uint32_t iteration,
                                                   std::vector<Received> local, NodeId root) {
  if (root >= nodes_) fail(ErrorKind::kInvalidArgument, "gather root out of range");
  if (self_ != root) {
    std::vector<std::byte> bytes;
    for (auto& item : local) {
      ItemMessage msg{iteration, channel, item.index, std::move(item.payload), 0};
      wire::append_frame(bytes, msg);
    }
    ItemMessage marker{iteration, channel, kEndMarker, {}, 0};
    wire::append_frame(bytes, marker);
    std::lock_guard lock(send_mu_);
    enqueue_locked({root, std::move(bytes), 0});
    return {};
  }
  for (auto& item : local) item.source = self_;
  if (nodes_ > 1) {
    const SlotKey key{channel, iteration};
    const auto deadline = std::chrono::steady_clock::now() + options_.timeout;
    std::unique_lock lock(in_mu_);
    for (;;) {
      raise_pending_locked();
      auto& slot = slot_locked(key);
      std::vector<NodeId> waiting_on;
      for (NodeId peer = 0; peer < nodes_; ++peer) {
        if (peer != self_ && !slot.markers[peer]) waiting_on.push_back(peer);
      }
      if (waiting_on.empty()) break;
      for (NodeId peer : waiting_on) {
        if (peer_closed_[peer]) {
          fail(ErrorKind::kDisconnected, fmt::format("node {} closed during {} iteration {}", peer,
                                                     to_string(channel), iteration));
        }
      }
      if (in_cv_.wait_until(lock, deadline) == std::cv_status::timeout &&
          std::chrono::steady_clock::now() >= deadline) {
        throw TransportTimeout(fmt::format("node {} timed out gathering {} iteration {}", self_, to_string(channel),
                                           iteration),
                               {}, waiting_on);
      }
    }
    auto& slot = slots_[key];
    for (auto& [src_index, payload] : slot.items) local.push_back({src_index.first, src_index.second, std::move(payload)});
    slots_.erase(key);
  }
  std::stable_sort(local.begin(), local.end(), [](const Received& a, const Received& b) { return a.index < b.index; });
  return local;
}

void Transport::clock_advance_locked(std::chrono::steady_clock::time_point now) {
  const double dt = std::chrono::duration<double>(now - last_).count();
  last_ = now;
  if (computing_) compute_s_ += dt;
  if (communicating_) comm_s_ += dt;
  if (computing_ && communicating_) both_s_ += dt;
}

void Transport::set_compute(bool active) {
  std::lock_guard lock(clock_mu_);
  clock_advance_locked(std::chrono::steady_clock::now());
  computing_ = active;
}

void Transport::set_comm(bool active) {
  std::lock_guard lock(clock_mu_);
  clock_advance_locked(std::chrono::steady_clock::now());
  communicating_ = active;
}

void Transport::begin_compute() { set_compute(true); }
void Transport::end_compute() { set_compute(false); }

OverlapStats Transport::collect_stats() const {
  OverlapStats out;
  {
    std::lock_guard lock(send_mu_);
    out = counters_;
  }
  std::lock_guard lock(clock_mu_);
  // Include the span since the last transition without mutating state.
  const auto now = std::chrono::steady_clock::now();
  const double dt = std::chrono::duration<double>(now - last_).count();
  out.elapsed = std::chrono::duration<double>(now - created_).count();
  out.compute_time = compute_s_ + (computing_ ? dt : 0.0);
  out.comm_time = comm_s_ + (communicating_ ? dt : 0.0);
  out.both_time = both_s_ + (computing_ && communicating_ ? dt : 0.0);
  return out;
}

std::map<WriteKey, WriteCount> Transport::write_counts() const {
  std::lock_guard lock(send_mu_);
  return counts_;
}

}  // namespace bpmf
