// Copyright 2026 The bpmf-dist Authors
// SPDX-License-Identifier: Apache-2.0

// Full-mesh TCP backend. Node i listens on its own endpoint, connects to
// every lower-numbered node and accepts every higher-numbered one. Each
// connection opens with a handshake that must agree on node count, K and the
// seed digest.

#pragma once

#include <atomic>
#include <chrono>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "bpmf/transport.hpp"

namespace bpmf {

struct TcpOptions {
  std::vector<std::string> endpoints;  // "host:port", one per node
  wire::Handshake hello;               // node_id and node_count must match endpoints
  std::chrono::milliseconds connect_timeout{30000};
};

class TcpBackend final : public Backend {
 public:
  /// Blocks until the mesh is connected. Throws kTransportFailure on socket
  /// errors, kTimeout when peers do not show up, kHandshakeMismatch.
  explicit TcpBackend(TcpOptions options);
  ~TcpBackend() override;

  NodeId self() const override { return options_.hello.node_id; }
  std::uint32_t num_nodes() const override { return options_.hello.node_count; }
  void start(Callbacks callbacks) override;
  void write(NodeId dest, std::span<const std::byte> frames) override;
  void close() override;

 private:
  struct Peer {
    int fd = -1;
    std::mutex write_mu;
    std::thread reader;
    std::atomic<bool> done{false};
  };

  void read_loop(NodeId peer);

  TcpOptions options_;
  Callbacks callbacks_;
  std::vector<std::unique_ptr<Peer>> peers_;
  std::atomic<bool> closing_{false};
  bool closed_ = false;
};

/// Splits "host:port". Throws kInvalidArgument.
std::pair<std::string, std::uint16_t> parse_endpoint(const std::string& endpoint);

}  // namespace bpmf
