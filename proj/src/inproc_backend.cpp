// Copyright 2026 The bpmf-dist Authors
// SPDX-License-Identifier: Apache-2.0

#include "bpmf/inproc_backend.hpp"

#include <thread>

#include <fmt/core.h>

namespace bpmf {

class InProcessEndpoint final : public Backend {
 public:
  InProcessEndpoint(std::shared_ptr<InProcessFabric> fabric, NodeId id) : fabric_(std::move(fabric)), id_(id) {}
  ~InProcessEndpoint() override { close(); }

  NodeId self() const override { return id_; }
  std::uint32_t num_nodes() const override { return fabric_->num_nodes(); }
  void start(Callbacks callbacks) override { fabric_->start(id_, std::move(callbacks)); }
  void write(NodeId dest, std::span<const std::byte> frames) override { fabric_->write(id_, dest, frames); }
  void close() override {
    if (!closed_) {
      closed_ = true;
      fabric_->close(id_);
    }
  }

 private:
  std::shared_ptr<InProcessFabric> fabric_;
  NodeId id_;
  bool closed_ = false;
};

std::shared_ptr<InProcessFabric> InProcessFabric::create(std::uint32_t num_nodes) {
  if (num_nodes == 0) fail(ErrorKind::kInvalidArgument, "fabric needs at least one node");
  return std::shared_ptr<InProcessFabric>(new InProcessFabric(num_nodes));
}

InProcessFabric::InProcessFabric(std::uint32_t num_nodes) {
  nodes_.reserve(num_nodes);
  for (std::uint32_t i = 0; i < num_nodes; ++i) nodes_.push_back(std::make_unique<NodeState>());
}

std::unique_ptr<Backend> InProcessFabric::endpoint(NodeId id) {
  if (id >= nodes_.size()) fail(ErrorKind::kInvalidArgument, fmt::format("no node {} in fabric", id));
  return std::make_unique<InProcessEndpoint>(shared_from_this(), id);
}

void InProcessFabric::set_fault_hook(FaultHook hook) {
  std::lock_guard lock(hook_mu_);
  hook_ = std::move(hook);
}

void InProcessFabric::start(NodeId id, Backend::Callbacks callbacks) {
  auto& node = *nodes_[id];
  std::lock_guard lock(node.mu);
  node.callbacks = std::move(callbacks);
  node.started = true;
  for (auto& [src, frame] : node.pending) node.callbacks.on_frame(src, frame);
  node.pending.clear();
}

void InProcessFabric::write(NodeId source, NodeId dest, std::span<const std::byte> frames) {
  if (dest >= nodes_.size()) fail(ErrorKind::kInvalidArgument, fmt::format("no node {} in fabric", dest));
  if (const auto us = latency_us_.load(); us > 0) std::this_thread::sleep_for(std::chrono::microseconds(us));

  FaultHook hook;
  {
    std::lock_guard lock(hook_mu_);
    hook = hook_;
  }
  auto& node = *nodes_[dest];
  std::lock_guard lock(node.mu);
  if (node.closed) fail(ErrorKind::kDisconnected, fmt::format("node {} is disconnected", dest));
  std::size_t pos = 0;
  while (pos < frames.size()) {
    const auto size = wire::peek_frame_size(frames.subspan(pos));
    if (!size || pos + *size > frames.size()) fail(ErrorKind::kParseError, "partial frame written to fabric");
    std::vector<std::byte> frame(frames.begin() + pos, frames.begin() + pos + *size);
    pos += *size;
    FaultAction action = FaultAction::kDeliver;
    if (hook) action = hook(source, dest, wire::peek_header(frame));
    if (action == FaultAction::kDrop) continue;
    if (action == FaultAction::kCorrupt) frame[frame.size() / 2] ^= std::byte{0x5A};
    const int copies = action == FaultAction::kDuplicate ? 2 : 1;
    for (int c = 0; c < copies; ++c) {
      ++delivered_;
      if (node.started) {
        node.callbacks.on_frame(source, frame);
      } else {
        node.pending.emplace_back(source, frame);
      }
    }
  }
}

void InProcessFabric::close(NodeId id) {
  {
    std::lock_guard lock(nodes_[id]->mu);
    nodes_[id]->closed = true;
  }
  for (NodeId other = 0; other < nodes_.size(); ++other) {
    if (other == id) continue;
    auto& node = *nodes_[other];
    std::lock_guard lock(node.mu);
    if (node.started && !node.closed && node.callbacks.on_peer_closed) node.callbacks.on_peer_closed(id);
  }
}

}  // namespace bpmf
