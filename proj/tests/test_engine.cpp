// Copyright 2026 The bpmf-dist Authors
// SPDX-License-Identifier: Apache-2.0

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "test_util.hpp"
#include "bpmf/checkpoint.hpp"
#include "bpmf/engine.hpp"
#include "bpmf/error.hpp"
#include "bpmf/metrics.hpp"

using namespace bpmf;
using testutil::TempDir;

namespace {

const std::string kFixture = testutil::source_path("data/fixture/fixture.mtx").string();

int run_cli(const std::string& args) {
  const std::string cmd = std::string(BPMF_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::vector<std::string> read_lines(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::vector<std::string> out;
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

std::vector<std::string> fields(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  for (std::string f; std::getline(ss, f, ',');) out.push_back(f);
  return out;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_SUITE("engine") {

TEST_CASE("config round trip through flags") {
  RunConfig c;
  c.train = "x.csv";
  c.format = "csv";
  c.csv_delimiter = "\t";
  c.csv_header = false;
  c.test_fraction = 0.15;
  c.strict_split = true;
  c.sampler.k = 7;
  c.sampler.alpha = 1.0 / 3.0;
  c.sampler.iterations = 33;
  c.sampler.burnin = 5;
  c.sampler.seed = 18446744073709551615ull;
  c.sampler.center = false;
  c.sampler.clamp = true;
  c.workers = 3;
  c.nodes = 2;
  c.node_id = 1;
  c.backend = "tcp";
  c.peers = {"a:1", "b:2"};
  c.policy = SendPolicy::broadcast();
  c.out = "o";
  c.checkpoint_every = 4;
  c.resume = "r.bin";
  c.reorder = false;
  c.timeout_s = 2.5;
  c.calibrate = true;
  c.latency_us = 9;
  const auto back = parse_args(to_args(c));
  REQUIRE(back.has_value());
  CHECK(*back == c);
  const auto def = parse_args(to_args(RunConfig{}));
  CHECK(*def == RunConfig{});
}

TEST_CASE("defaults, burn-in and environment overrides") {
  auto c = parse_args({"--train", "f.mtx", "--iterations", "30"});
  REQUIRE(c);
  CHECK(c->sampler.burnin == 15);
  CHECK(c->policy == SendPolicy::buffered(64));
  ::setenv("BPMF_K", "7", 1);
  ::setenv("BPMF_POLICY", "eager", 1);
  c = parse_args({"--train", "f.mtx"});
  CHECK(c->sampler.k == 7);
  CHECK(c->policy == SendPolicy::eager());
  c = parse_args({"--train", "f.mtx", "--k", "5"});
  CHECK(c->sampler.k == 5);
  ::unsetenv("BPMF_K");
  ::unsetenv("BPMF_POLICY");
  CHECK_FALSE(parse_args({"--help"}).has_value());
  CHECK_THROWS_AS(parse_args({"--bogus"}), Error);
  CHECK_THROWS_AS(parse_args({"--center", "maybe"}), Error);
  CHECK(usage().find("--policy") != std::string::npos);
}

TEST_CASE("config validation") {
  RunConfig c;
  c.train = "f";
  CHECK_NOTHROW(c.validate());
  c.node_id = 1;
  CHECK_THROWS_AS(c.validate(), Error);
  c = RunConfig{};
  c.train = "f";
  c.backend = "tcp";
  c.nodes = 2;
  CHECK_THROWS_AS(c.validate(), Error);  // no peers
  c.peers = {"h:1", "h:2"};
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("exit code mapping") {
  CHECK(exit_code_for(ErrorKind::kInvalidArgument) == ExitCode::kConfig);
  CHECK(exit_code_for(ErrorKind::kMoreNodesThanItems) == ExitCode::kConfig);
  CHECK(exit_code_for(ErrorKind::kCheckpointMismatch) == ExitCode::kConfig);
  for (auto k : {ErrorKind::kParseError, ErrorKind::kDuplicateEntry, ErrorKind::kIndexOutOfHeaderBounds,
                 ErrorKind::kSchemaMismatch, ErrorKind::kTooSparse, ErrorKind::kIoError})
    CHECK(exit_code_for(k) == ExitCode::kData);
  for (auto k : {ErrorKind::kDisconnected, ErrorKind::kTimeout, ErrorKind::kChecksumFailure,
                 ErrorKind::kHandshakeMismatch, ErrorKind::kDuplicateMessage, ErrorKind::kTransportFailure})
    CHECK(exit_code_for(k) == ExitCode::kTransport);
  CHECK(exit_code_for(ErrorKind::kNotPositiveDefinite) == ExitCode::kInternal);
}

TEST_CASE("metrics serialization") {
  MetricsRecord r;
  r.iteration = 3;
  r.phase_u_ms = 1.5;
  r.phase_v_ms = 2.25;
  r.rmse_sample = 0.1;
  r.rmse_avg = 0.75;
  r.updates_per_sec = 1234.56;
  r.comm_ms = 0.125;
  r.both_ms = 0.0625;
  r.bytes_sent = 4096;
  r.msgs_sent = 12;
  CHECK(csv_header() == "iteration,phase_u_ms,phase_v_ms,rmse_sample,rmse_avg,updates_per_sec,comm_ms,both_ms,"
                        "bytes_sent,msgs_sent");
  CHECK(csv_row(r) == "3,1.500,2.250,0.10000000000000001,0.75,1234.6,0.125,0.062,4096,12");
  const auto j = json_line(r, 2);
  CHECK(j.find("\"node\":2") != std::string::npos);
  CHECK(j.find("\"rmse_sample\":0.1") != std::string::npos);

  TempDir dir("metrics");
  { MetricsSink sink(dir / "m.csv", dir / "m.jsonl"); }
  CHECK(read_lines(dir / "m.csv") == std::vector<std::string>{csv_header()});
  {
    MetricsSink sink(dir / "m.csv", dir / "m.jsonl");
    sink.emit(r);
  }
  CHECK(read_lines(dir / "m.csv").size() == 2);
  CHECK(read_lines(dir / "m.jsonl").size() == 1);
  CHECK_THROWS_AS(MetricsSink(dir / "missing" / "m.csv", dir / "m.jsonl"), Error);
}

TEST_CASE("cli smoke run on the fixture") {
  TempDir dir("smoke");
  const auto out = (dir / "out").string();
  REQUIRE(run_cli("--train " + kFixture + " --iterations 2 --burnin 1 --k 4 --out " + out) == 0);
  const auto lines = read_lines(dir / "out" / "metrics.csv");
  REQUIRE(lines.size() == 3);
  CHECK(lines[0] == csv_header());
  for (int i = 1; i <= 2; ++i) {
    const auto f = fields(lines[i]);
    REQUIRE(f.size() == 10);
    CHECK(f[0] == std::to_string(i));
    CHECK(std::isfinite(std::stod(f[3])));
    CHECK(std::isfinite(std::stod(f[4])));
  }
  for (const char* name : {"metrics.csv", "log.jsonl", "checkpoint.bin", "predictions.csv", "summary.json", "plan.json"})
    CHECK(std::filesystem::exists(dir / "out" / name));
  const auto preds = read_lines(dir / "out" / "predictions.csv");
  CHECK(preds[0] == "user,movie,rating,prediction");
  CHECK(preds.size() == 1 + std::size_t(std::llround(0.2 * 1202)));
  const auto ck = read_checkpoint(dir / "out" / "checkpoint.bin");
  CHECK(ck.iteration == 2);
  CHECK(ck.num_users == 100);
  CHECK(ck.num_movies == 80);
}

TEST_CASE("zero iterations leave a header-only metrics file") {
  TempDir dir("zero");
  const auto out = (dir / "out").string();
  REQUIRE(run_cli("--train " + kFixture + " --iterations 0 --burnin 0 --out " + out) == 0);
  CHECK(read_lines(dir / "out" / "metrics.csv") == std::vector<std::string>{csv_header()});
}

TEST_CASE("resume continues the trace of an uninterrupted run") {
  TempDir dir("resume");
  const std::string common = "--train " + kFixture + " --k 4 --burnin 2 --nodes 2 --seed 11 ";
  REQUIRE(run_cli(common + "--iterations 6 --out " + (dir / "full").string()) == 0);
  REQUIRE(run_cli(common + "--iterations 3 --out " + (dir / "a").string()) == 0);
  REQUIRE(run_cli(common + "--iterations 6 --workers 2 --resume " + (dir / "a" / "checkpoint.bin").string() +
                  " --out " + (dir / "b").string()) == 0);
  const auto full = read_lines(dir / "full" / "metrics.csv");
  const auto rest = read_lines(dir / "b" / "metrics.csv");
  REQUIRE(full.size() == 7);
  REQUIRE(rest.size() == 4);
  for (int i = 1; i <= 3; ++i) {
    const auto f = fields(full[3 + i]), r = fields(rest[i]);
    CHECK(r[0] == f[0]);
    CHECK(r[3] == f[3]);
    CHECK(r[4] == f[4]);
  }
  CHECK(slurp(dir / "full" / "checkpoint.bin") == slurp(dir / "b" / "checkpoint.bin"));
  CHECK(slurp(dir / "full" / "predictions.csv") == slurp(dir / "b" / "predictions.csv"));
}

TEST_CASE("timing identity on a multi-node run") {
  TempDir dir("timing");
  REQUIRE(run_cli("--train " + kFixture + " --iterations 4 --nodes 3 --policy eager --latency-us 50 --out " +
                  (dir / "o").string()) == 0);
  std::ifstream in(dir / "o" / "log.jsonl");
  int rows = 0;
  for (std::string line; std::getline(in, line); ++rows) {
    const auto num = [&](const std::string& key) {
      const auto p = line.find("\"" + key + "\":");
      REQUIRE(p != std::string::npos);
      return std::stod(line.substr(p + key.size() + 3));
    };
    CHECK(num("compute_ms") + num("comm_ms") - num("both_ms") <= num("wall_ms") + 1e-6);
    CHECK(num("both_ms") <= num("comm_ms") + 1e-9);
  }
  CHECK(rows == 4);
}

TEST_CASE("cli exit codes") {
  TempDir dir("codes");
  CHECK(run_cli("--help") == 0);
  CHECK(run_cli("--bogus") == 1);
  CHECK(run_cli("--train " + (dir / "none.mtx").string() + " --out " + (dir / "o").string()) == 2);
  testutil::write_file(dir / "bad.mtx", "%%MatrixMarket matrix coordinate real general\n3 3 1\n4 1 2.0\n");
  CHECK(run_cli("--train " + (dir / "bad.mtx").string() + " --out " + (dir / "o").string()) == 2);
  CHECK(run_cli("--train " + kFixture + " --nodes 500 --out " + (dir / "o").string()) == 1);
  CHECK(run_cli("--train " + kFixture + " --k 0 --out " + (dir / "o").string()) == 1);
}

}
