// Copyright 2026 The bpmf-dist Authors
// SPDX-License-Identifier: Apache-2.0

#include "bpmf/tcp_backend.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <charconv>
#include <cstring>

#include <fmt/core.h>

namespace bpmf {

namespace {

using Clock = std::chrono::steady_clock;

[[noreturn]] void fail_errno(const std::string& what) {
  fail(ErrorKind::kTransportFailure, fmt::format("{}: {}", what, std::strerror(errno)));
}

int remaining_ms(Clock::time_point deadline) {
  const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now()).count();
  return left > 0 ? static_cast<int>(left) : 0;
}

// Reads exactly buf.size() bytes; false on orderly EOF before the first byte.
bool read_exact(int fd, std::span<std::byte> buf) {
  std::size_t got = 0;
  while (got < buf.size()) {
    const ssize_t n = ::recv(fd, buf.data() + got, buf.size() - got, 0);
    if (n == 0) {
      if (got == 0) return false;
      fail(ErrorKind::kDisconnected, "connection closed mid-frame");
    }
    if (n < 0) {
      if (errno == EINTR) continue;
      fail(ErrorKind::kDisconnected, fmt::format("recv failed: {}", std::strerror(errno)));
    }
    got += static_cast<std::size_t>(n);
  }
  return true;
}

void write_all(int fd, std::span<const std::byte> buf) {
  std::size_t sent = 0;
  while (sent < buf.size()) {
    const ssize_t n = ::send(fd, buf.data() + sent, buf.size() - sent, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      fail(ErrorKind::kDisconnected, fmt::format("send failed: {}", std::strerror(errno)));
    }
    sent += static_cast<std::size_t>(n);
  }
}

// Like read_exact but bounded by a deadline; used during the handshake.
void read_exact_until(int fd, std::span<std::byte> buf, Clock::time_point deadline) {
  std::size_t got = 0;
  while (got < buf.size()) {
    pollfd p{fd, POLLIN, 0};
    const int r = ::poll(&p, 1, remaining_ms(deadline));
    if (r == 0) fail(ErrorKind::kTimeout, "handshake timed out");
    if (r < 0) {
      if (errno == EINTR) continue;
      fail_errno("poll");
    }
    const ssize_t n = ::recv(fd, buf.data() + got, buf.size() - got, 0);
    if (n <= 0) fail(ErrorKind::kHandshakeMismatch, "peer closed during handshake");
    got += static_cast<std::size_t>(n);
  }
}

void set_nodelay(int fd) {
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
}

int connect_with_retry(const std::string& host, std::uint16_t port, Clock::time_point deadline) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  for (;;) {
    addrinfo* res = nullptr;
    const std::string port_text = std::to_string(port);
    if (const int rc = ::getaddrinfo(host.c_str(), port_text.c_str(), &hints, &res); rc != 0) {
      fail(ErrorKind::kTransportFailure, fmt::format("cannot resolve {}: {}", host, ::gai_strerror(rc)));
    }
    int fd = -1;
    for (addrinfo* ai = res; ai; ai = ai->ai_next) {
      fd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
      if (fd < 0) continue;
      if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) break;
      ::close(fd);
      fd = -1;
    }
    ::freeaddrinfo(res);
    if (fd >= 0) {
      set_nodelay(fd);
      return fd;
    }
    if (Clock::now() >= deadline) fail(ErrorKind::kTimeout, fmt::format("could not connect to {}:{}", host, port));
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
  }
}

int listen_on(std::uint16_t port) {
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd < 0) fail_errno("socket");
  int one = 1;
  ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_ANY);
  addr.sin_port = htons(port);
  if (::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
    ::close(fd);
    fail_errno(fmt::format("bind port {}", port));
  }
  if (::listen(fd, 64) != 0) {
    ::close(fd);
    fail_errno("listen");
  }
  return fd;
}

void check_peer(const wire::Handshake& mine, const wire::Handshake& theirs) {
  if (theirs.node_count != mine.node_count || theirs.k != mine.k || theirs.seed_digest != mine.seed_digest) {
    fail(ErrorKind::kHandshakeMismatch,
         fmt::format("node {} disagrees with node {}: nodes {} vs {}, k {} vs {}, seed digest {:016x} vs {:016x}",
                     theirs.node_id, mine.node_id, theirs.node_count, mine.node_count, theirs.k, mine.k,
                     theirs.seed_digest, mine.seed_digest));
  }
  if (theirs.node_id >= mine.node_count || theirs.node_id == mine.node_id) {
    fail(ErrorKind::kHandshakeMismatch, fmt::format("unexpected peer id {}", theirs.node_id));
  }
}

}  // namespace

std::pair<std::string, std::uint16_t> parse_endpoint(const std::string& endpoint) {
  const auto colon = endpoint.rfind(':');
  if (colon == std::string::npos || colon == 0) {
    fail(ErrorKind::kInvalidArgument, fmt::format("endpoint '{}' is not HOST:PORT", endpoint));
  }
  std::string host = endpoint.substr(0, colon);
  if (host.size() > 2 && host.front() == '[' && host.back() == ']') host = host.substr(1, host.size() - 2);
  unsigned port = 0;
  const char* first = endpoint.data() + colon + 1;
  const char* last = endpoint.data() + endpoint.size();
  const auto [ptr, ec] = std::from_chars(first, last, port);
  if (ec != std::errc() || ptr != last || port == 0 || port > 65535) {
    fail(ErrorKind::kInvalidArgument, fmt::format("endpoint '{}' has a bad port", endpoint));
  }
  return {host, static_cast<std::uint16_t>(port)};
}

TcpBackend::TcpBackend(TcpOptions options) : options_(std::move(options)) {
  const auto& hello = options_.hello;
  if (options_.endpoints.size() != hello.node_count || hello.node_id >= hello.node_count) {
    fail(ErrorKind::kInvalidArgument, fmt::format("{} endpoints given for {} nodes (node id {})",
                                                  options_.endpoints.size(), hello.node_count, hello.node_id));
  }
  peers_.resize(hello.node_count);
  for (auto& p : peers_) p = std::make_unique<Peer>();
  const auto deadline = Clock::now() + options_.connect_timeout;
  const auto mine = wire::encode_handshake(hello);

  int listener = -1;
  try {
    if (hello.node_id + 1 < hello.node_count) listener = listen_on(parse_endpoint(options_.endpoints[hello.node_id]).second);
    for (NodeId j = 0; j < hello.node_id; ++j) {
      const auto [host, port] = parse_endpoint(options_.endpoints[j]);
      const int fd = connect_with_retry(host, port, deadline);
      peers_[j]->fd = fd;
      write_all(fd, mine);
      std::array<std::byte, wire::kHandshakeSize> buf{};
      read_exact_until(fd, buf, deadline);
      const auto theirs = wire::decode_handshake(buf);
      check_peer(hello, theirs);
      if (theirs.node_id != j) fail(ErrorKind::kHandshakeMismatch, fmt::format("expected node {} at {}, got node {}", j, options_.endpoints[j], theirs.node_id));
    }
    std::uint32_t pending = hello.node_count - hello.node_id - 1;
    while (pending > 0) {
      pollfd p{listener, POLLIN, 0};
      const int r = ::poll(&p, 1, remaining_ms(deadline));
      if (r == 0) fail(ErrorKind::kTimeout, fmt::format("node {} still waiting for {} peers", hello.node_id, pending));
      if (r < 0) {
        if (errno == EINTR) continue;
        fail_errno("poll");
      }
      const int fd = ::accept(listener, nullptr, nullptr);
      if (fd < 0) fail_errno("accept");
      set_nodelay(fd);
      std::array<std::byte, wire::kHandshakeSize> buf{};
      try {
        read_exact_until(fd, buf, deadline);
        const auto theirs = wire::decode_handshake(buf);
        check_peer(hello, theirs);
        if (theirs.node_id < hello.node_id || peers_[theirs.node_id]->fd >= 0) {
          fail(ErrorKind::kHandshakeMismatch, fmt::format("unexpected connection from node {}", theirs.node_id));
        }
        write_all(fd, mine);
        peers_[theirs.node_id]->fd = fd;
      } catch (...) {
        ::close(fd);
        throw;
      }
      --pending;
    }
  } catch (...) {
    if (listener >= 0) ::close(listener);
    for (auto& p : peers_) {
      if (p->fd >= 0) ::close(p->fd);
      p->fd = -1;
    }
    throw;
  }
  if (listener >= 0) ::close(listener);
}

TcpBackend::~TcpBackend() {
  try {
    close();
  } catch (...) {
  }
}

void TcpBackend::start(Callbacks callbacks) {
  callbacks_ = std::move(callbacks);
  for (NodeId j = 0; j < peers_.size(); ++j) {
    if (peers_[j]->fd >= 0) peers_[j]->reader = std::thread([this, j] { read_loop(j); });
  }
}

void TcpBackend::read_loop(NodeId peer) {
  Peer& p = *peers_[peer];
  std::vector<std::byte> frame;
  try {
    for (;;) {
      frame.resize(wire::kHeaderSize);
      if (!read_exact(p.fd, frame)) break;
      const auto size = wire::peek_frame_size(frame);
      frame.resize(*size);
      if (!read_exact(p.fd, std::span(frame).subspan(wire::kHeaderSize))) {
        fail(ErrorKind::kDisconnected, "connection closed mid-frame");
      }
      callbacks_.on_frame(peer, frame);
    }
  } catch (const std::exception&) {
    // A broken stream is reported as a closed peer; waits on it then fail.
  }
  p.done = true;
  if (!closing_ && callbacks_.on_peer_closed) callbacks_.on_peer_closed(peer);
}

void TcpBackend::write(NodeId dest, std::span<const std::byte> frames) {
  if (dest >= peers_.size() || peers_[dest]->fd < 0) {
    fail(ErrorKind::kInvalidArgument, fmt::format("no connection to node {}", dest));
  }
  Peer& p = *peers_[dest];
  std::lock_guard lock(p.write_mu);
  write_all(p.fd, frames);
}

void TcpBackend::close() {
  if (closed_) return;
  closed_ = true;
  closing_ = true;
  // Half-close first so buffered data drains, then wait for the peer's FIN.
  for (auto& p : peers_) {
    if (p->fd >= 0) ::shutdown(p->fd, SHUT_WR);
  }
  const auto deadline = Clock::now() + std::chrono::seconds(10);
  for (auto& p : peers_) {
    while (p->reader.joinable() && !p->done && Clock::now() < deadline) {
      std::this_thread::sleep_for(std::chrono::milliseconds(2));
    }
    if (p->fd >= 0 && !p->done) ::shutdown(p->fd, SHUT_RDWR);
    if (p->reader.joinable()) p->reader.join();
    if (p->fd >= 0) ::close(p->fd);
    p->fd = -1;
  }
}

}  // namespace bpmf
