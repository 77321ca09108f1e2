// Copyright 2026 The bpmf-dist Authors
// SPDX-License-Identifier: Apache-2.0

#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <cstring>
#include <functional>
#include <numeric>
#include <random>
#include <set>
#include <thread>

#include "doctest.h"
#include "bpmf/error.hpp"
#include "bpmf/inproc_backend.hpp"
#include "bpmf/tcp_backend.hpp"
#include "bpmf/transport.hpp"

using namespace bpmf;
using namespace std::chrono_literals;

namespace {

struct Cluster {
  std::shared_ptr<InProcessFabric> fabric;
  std::vector<std::unique_ptr<Transport>> nodes;

  Cluster(std::uint32_t n, SendPolicy policy, std::chrono::milliseconds timeout = 10s) {
    fabric = InProcessFabric::create(n);
    for (NodeId i = 0; i < n; ++i)
      nodes.push_back(std::make_unique<Transport>(fabric->endpoint(i), TransportOptions{policy, timeout}));
  }

  // Runs fn on every node concurrently; returns the error text per node.
  std::vector<std::string> run(const std::function<void(NodeId, Transport&)>& fn) {
    std::vector<std::string> errors(nodes.size());
    std::vector<std::thread> threads;
    for (NodeId i = 0; i < nodes.size(); ++i) {
      threads.emplace_back([&, i] {
        try {
          fn(i, *nodes[i]);
        } catch (const std::exception& e) {
          errors[i] = e.what();
        }
      });
    }
    for (auto& t : threads) t.join();
    return errors;
  }
};

std::vector<double> payload_for(NodeId src, std::uint32_t idx) {
  return {double(src) + 0.25, double(idx) / 3.0, -double(idx) * 1e-300};
}

int free_port() {
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  sockaddr_in a{};
  a.sin_family = AF_INET;
  a.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  ::bind(fd, reinterpret_cast<sockaddr*>(&a), sizeof a);
  socklen_t len = sizeof a;
  ::getsockname(fd, reinterpret_cast<sockaddr*>(&a), &len);
  ::close(fd);
  return ntohs(a.sin_port);
}

bool all_empty(const std::vector<std::string>& v) {
  for (const auto& s : v)
    if (!s.empty()) return false;
  return true;
}

}  // namespace

TEST_SUITE("transport") {

TEST_CASE("policy parsing") {
  CHECK(SendPolicy::parse("eager") == SendPolicy::eager());
  CHECK(SendPolicy::parse("broadcast") == SendPolicy::broadcast());
  CHECK(SendPolicy::parse("buffered") == SendPolicy::buffered(64));
  CHECK(SendPolicy::parse("buffered:7") == SendPolicy::buffered(7));
  CHECK(SendPolicy::parse(SendPolicy::buffered(9).to_string()) == SendPolicy::buffered(9));
  CHECK_THROWS_AS(SendPolicy::parse("buffered:0"), Error);
  CHECK_THROWS_AS(SendPolicy::parse("gaspi"), Error);
}

TEST_CASE("buffered and eager wire write counts") {
  Cluster c(2, SendPolicy::buffered(4));
  auto& tx = *c.nodes[0];
  const WriteKey key{1, Channel::kMovieItems, 1};
  for (std::uint32_t i = 0; i < 3; ++i) tx.send_item(1, Channel::kMovieItems, 1, i, payload_for(0, i));
  tx.flush();
  CHECK(tx.write_counts()[key].writes == 0);
  CHECK(c.fabric->frames_delivered() == 0);
  tx.send_item(1, Channel::kMovieItems, 1, 3, payload_for(0, 3));
  tx.flush();
  CHECK(tx.write_counts()[key].writes == 1);
  CHECK(tx.collect_stats().wire_writes == 1);
  CHECK(c.fabric->frames_delivered() == 4);

  Cluster e(2, SendPolicy::eager());
  for (std::uint32_t i = 0; i < 4; ++i) e.nodes[0]->send_item(1, Channel::kMovieItems, 1, i, payload_for(0, i));
  e.nodes[0]->flush();
  CHECK(e.nodes[0]->write_counts()[key].writes == 4);
  CHECK(e.nodes[0]->collect_stats().messages_sent == 4);
}

TEST_CASE("buffered write count law") {
  for (std::uint32_t cap : {1u, 3u, 8u, 64u}) {
    Cluster c(3, SendPolicy::buffered(cap));
    std::mt19937_64 gen(cap);
    std::vector<std::vector<std::uint32_t>> sends(3);  // per dest, from node 0
    for (NodeId d = 1; d < 3; ++d) sends[d].resize(gen() % 200);
    const auto errors = c.run([&](NodeId self, Transport& tx) {
      if (self == 0) {
        for (NodeId d = 1; d < 3; ++d)
          for (std::uint32_t i = 0; i < sends[d].size(); ++i) tx.send_item(d, Channel::kUserItems, 5, i, payload_for(0, i));
      }
      std::vector<std::uint32_t> expected;
      if (self != 0)
        for (std::uint32_t i = 0; i < sends[self].size(); ++i) expected.push_back(i);
      const auto got = tx.end_phase(Channel::kUserItems, 5, expected);
      CHECK(got.size() == expected.size());
    });
    CHECK(all_empty(errors));
    const auto counts = c.nodes[0]->write_counts();
    for (NodeId d = 1; d < 3; ++d) {
      const std::uint64_t s = sends[d].size();
      const auto it = counts.find(WriteKey{d, Channel::kUserItems, 5});
      const std::uint64_t writes = it == counts.end() ? 0 : it->second.writes;
      CHECK(writes == (s + cap - 1) / cap);
    }
  }
}

TEST_CASE("single node completes immediately") {
  Cluster c(1, SendPolicy::eager());
  const auto t0 = std::chrono::steady_clock::now();
  CHECK(c.nodes[0]->end_phase(Channel::kMovieItems, 1, {}).empty());
  CHECK(c.nodes[0]->all_gather(Channel::kEvaluation, 1, std::vector{1.0})[0] == std::vector{1.0});
  CHECK(std::chrono::steady_clock::now() - t0 < 100ms);
  const auto s = c.nodes[0]->collect_stats();
  CHECK(s.bytes_sent == 0);
  CHECK(s.comm_time == 0.0);
}

TEST_CASE("loopback exchange is bitwise and idempotent") {
  for (auto policy : {SendPolicy::eager(), SendPolicy::buffered(3), SendPolicy::broadcast()}) {
    Cluster c(2, policy);
    const auto errors = c.run([&](NodeId self, Transport& tx) {
      const NodeId peer = 1 - self;
      std::vector<std::uint32_t> expected;
      for (std::uint32_t i = 0; i < 10; ++i) {
        if (i % 2 == self) tx.send_item(peer, Channel::kMovieItems, 2, i, payload_for(self, i));
        else expected.push_back(i);
      }
      const auto got = tx.end_phase(Channel::kMovieItems, 2, expected);
      REQUIRE(got.size() == expected.size());
      for (std::size_t j = 0; j < got.size(); ++j) {
        CHECK(got[j].index == expected[j]);
        CHECK(got[j].source == peer);
        const auto want = payload_for(peer, expected[j]);
        CHECK(std::memcmp(got[j].payload.data(), want.data(), 8 * want.size()) == 0);
      }
      const auto again = tx.end_phase(Channel::kMovieItems, 2, expected);
      CHECK(again.size() == got.size());
      const auto g = tx.all_gather(Channel::kEvaluation, 2, std::vector{double(self)});
      CHECK(g[0] == std::vector{0.0});
      CHECK(g[1] == std::vector{1.0});
      std::vector<Transport::Received> mine = {{self, 10 + self, {double(self)}}};
      const auto all = tx.gather(Channel::kGatherMovies, 2, mine);
      if (self == 0) {
        REQUIRE(all.size() == 2);
        CHECK(all[0].index == 10);
        CHECK(all[1].index == 11);
      } else {
        CHECK(all.empty());
      }
    });
    CHECK(all_empty(errors));
  }
}

TEST_CASE("a dropped message times out listing exactly what is missing") {
  Cluster c(2, SendPolicy::eager(), 300ms);
  c.fabric->set_fault_hook([](NodeId, NodeId, const wire::FrameHeader& h) {
    return h.phase == std::uint8_t(Channel::kUserItems) && h.index == 7 ? FaultAction::kDrop : FaultAction::kDeliver;
  });
  std::vector<std::pair<Channel, std::uint32_t>> missing;
  const auto errors = c.run([&](NodeId self, Transport& tx) {
    std::vector<std::uint32_t> expected;
    if (self == 0)
      for (std::uint32_t i = 0; i < 10; ++i) tx.send_item(1, Channel::kUserItems, 3, i, payload_for(0, i));
    else
      for (std::uint32_t i = 0; i < 10; ++i) expected.push_back(i);
    try {
      tx.end_phase(Channel::kUserItems, 3, expected);
    } catch (const TransportTimeout& t) {
      missing = t.missing();
      CHECK(t.missing_markers().empty());
      throw;
    }
  });
  CHECK(errors[0].empty());
  CHECK_FALSE(errors[1].empty());
  CHECK(missing == std::vector<std::pair<Channel, std::uint32_t>>{{Channel::kUserItems, 7}});
}

TEST_CASE("a dropped marker is reported") {
  Cluster c(3, SendPolicy::eager(), 300ms);
  c.fabric->set_fault_hook([](NodeId src, NodeId, const wire::FrameHeader& h) {
    return src == 2 && h.index == kEndMarker ? FaultAction::kDrop : FaultAction::kDeliver;
  });
  std::vector<NodeId> markers;
  const auto errors = c.run([&](NodeId self, Transport& tx) {
    try {
      tx.end_phase(Channel::kMovieItems, 1, {});
    } catch (const TransportTimeout& t) {
      if (self == 0) markers = t.missing_markers();
      throw;
    }
  });
  CHECK(errors[2].empty());
  CHECK(markers == std::vector<NodeId>{2});
}

TEST_CASE("duplicates and corruption surface as errors") {
  for (auto action : {FaultAction::kDuplicate, FaultAction::kCorrupt}) {
    Cluster c(2, SendPolicy::eager(), 2s);
    c.fabric->set_fault_hook([action](NodeId, NodeId, const wire::FrameHeader& h) {
      return h.index == 4 ? action : FaultAction::kDeliver;
    });
    ErrorKind kind = ErrorKind::kInvalidArgument;
    const auto errors = c.run([&](NodeId self, Transport& tx) {
      std::vector<std::uint32_t> expected;
      if (self == 0)
        for (std::uint32_t i = 0; i < 8; ++i) tx.send_item(1, Channel::kMovieItems, 1, i, payload_for(0, i));
      else
        for (std::uint32_t i = 0; i < 8; ++i) expected.push_back(i);
      try {
        tx.end_phase(Channel::kMovieItems, 1, expected);
      } catch (const Error& e) {
        kind = e.kind();
        throw;
      }
    });
    CHECK_FALSE(errors[1].empty());
    CHECK(kind == (action == FaultAction::kDuplicate ? ErrorKind::kDuplicateMessage : ErrorKind::kChecksumFailure));
  }
}

TEST_CASE("randomized soak: exactly-once delivery") {
  std::mt19937_64 gen(77);
  for (int round = 0; round < 8; ++round) {
    const std::uint32_t n = 2 + gen() % 3;
    const SendPolicy policies[] = {SendPolicy::eager(), SendPolicy::buffered(1 + gen() % 10), SendPolicy::broadcast()};
    Cluster c(n, policies[round % 3]);
    // dest[i]: which nodes get item i from its owner i % n.
    const std::uint32_t items = 200;
    std::vector<std::set<NodeId>> dest(items);
    for (std::uint32_t i = 0; i < items; ++i)
      for (NodeId d = 0; d < n; ++d)
        if (d != i % n && gen() % 2) dest[i].insert(d);
    const auto errors = c.run([&](NodeId self, Transport& tx) {
      for (std::uint32_t it = 1; it <= 3; ++it) {
        const auto ch = it % 2 ? Channel::kMovieItems : Channel::kUserItems;
        std::vector<std::thread> workers;
        for (int w = 0; w < 3; ++w) {
          workers.emplace_back([&, w] {
            for (std::uint32_t i = w; i < items; i += 3)
              if (i % n == self)
                for (NodeId d : dest[i]) tx.send_item(d, ch, it, i, payload_for(self, i + it));
          });
        }
        for (auto& t : workers) t.join();
        std::vector<std::uint32_t> expected;
        for (std::uint32_t i = 0; i < items; ++i)
          if (dest[i].contains(self)) expected.push_back(i);
        const auto got = tx.end_phase(ch, it, expected);
        REQUIRE(got.size() == expected.size());
        for (std::size_t j = 0; j < got.size(); ++j) {
          CHECK(got[j].index == expected[j]);
          CHECK(got[j].payload == payload_for(expected[j] % n, expected[j] + it));
        }
      }
    });
    CHECK(all_empty(errors));
  }
}

TEST_CASE("overlap accounting") {
  auto workload = [](SendPolicy policy) {
    Cluster c(2, policy);
    c.fabric->set_write_latency(200us);
    const auto errors = c.run([&](NodeId self, Transport& tx) {
      tx.begin_compute();
      for (std::uint32_t i = 0; i < 100; ++i) {
        const auto until = std::chrono::steady_clock::now() + 300us;
        while (std::chrono::steady_clock::now() < until) {
        }
        tx.send_item(1 - self, Channel::kMovieItems, 1, i, payload_for(self, i));
      }
      tx.end_compute();
      std::vector<std::uint32_t> expected(100);
      std::iota(expected.begin(), expected.end(), 0u);
      tx.end_phase(Channel::kMovieItems, 1, expected);
      tx.flush();
    });
    CHECK(all_empty(errors));
    return c.nodes[0]->collect_stats();
  };
  const auto b = workload(SendPolicy::broadcast());
  const auto e = workload(SendPolicy::eager());
  CHECK(b.comm_time > 0.0);
  CHECK(b.both_time <= 0.02 * b.comm_time);
  CHECK(e.overlap_fraction() > b.overlap_fraction());
  for (const auto& s : {b, e}) {
    CHECK(s.both_time <= std::min(s.compute_time, s.comm_time));
    CHECK(s.bytes_sent > 0);
    CHECK(s.messages_sent == 100);
  }
  const auto d = e.since(b);
  CHECK(d.messages_sent == 0);
}

TEST_CASE("tcp loopback exchange") {
  const std::vector<std::string> eps = {"127.0.0.1:" + std::to_string(free_port()),
                                        "127.0.0.1:" + std::to_string(free_port())};
  std::vector<std::string> errors(2);
  std::vector<std::vector<Transport::Received>> got(2);
  std::vector<std::thread> threads;
  for (NodeId self = 0; self < 2; ++self) {
    threads.emplace_back([&, self] {
      try {
        TcpOptions o{eps, {self, 2, 3, wire::seed_digest(9)}, 10s};
        Transport tx(std::make_unique<TcpBackend>(o), {SendPolicy::buffered(4), 10s});
        std::vector<std::uint32_t> expected;
        for (std::uint32_t i = 0; i < 20; ++i) {
          if (i % 2 == self) tx.send_item(1 - self, Channel::kUserItems, 1, i, payload_for(self, i));
          else expected.push_back(i);
        }
        got[self] = tx.end_phase(Channel::kUserItems, 1, expected);
        const auto g = tx.all_gather(Channel::kEvaluation, 1, std::vector{double(self) + 0.5});
        CHECK(g[1 - self] == std::vector{double(1 - self) + 0.5});
        tx.close();
      } catch (const std::exception& e) {
        errors[self] = e.what();
      }
    });
  }
  for (auto& t : threads) t.join();
  CHECK(all_empty(errors));
  for (NodeId self = 0; self < 2; ++self) {
    REQUIRE(got[self].size() == 10);
    for (const auto& r : got[self]) CHECK(r.payload == payload_for(1 - self, r.index));
  }
}

TEST_CASE("tcp handshake mismatch aborts") {
  const std::vector<std::string> eps = {"127.0.0.1:" + std::to_string(free_port()),
                                        "127.0.0.1:" + std::to_string(free_port())};
  std::vector<ErrorKind> kinds(2, ErrorKind::kInvalidArgument);
  std::vector<bool> threw(2, false);
  std::vector<std::thread> threads;
  for (NodeId self = 0; self < 2; ++self) {
    threads.emplace_back([&, self] {
      try {
        TcpBackend b({eps, {self, 2, self == 0 ? 3u : 4u, wire::seed_digest(9)}, 3s});
      } catch (const Error& e) {
        threw[self] = true;
        kinds[self] = e.kind();
      }
    });
  }
  for (auto& t : threads) t.join();
  CHECK(threw[0]);
  CHECK(threw[1]);
  CHECK((kinds[0] == ErrorKind::kHandshakeMismatch || kinds[1] == ErrorKind::kHandshakeMismatch));
  CHECK_THROWS_AS(parse_endpoint("localhost"), Error);
  CHECK(parse_endpoint("h:80") == std::pair<std::string, std::uint16_t>{"h", 80});
}

}
