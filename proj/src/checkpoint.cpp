// Copyright 2026 The bpmf-dist Authors
// SPDX-License-Identifier: Apache-2.0

#include "bpmf/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <fmt/core.h>

#include "bpmf/error.hpp"
#include "bpmf/rng.hpp"
#include "bpmf/wire.hpp"

namespace bpmf {

namespace {

constexpr char kMagic[8] = {'B', 'P', 'M', 'F', 'C', 'K', 'P', 'T'};

class Writer {
 public:
  template <typename T>
  void put(T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) bytes.push_back(static_cast<std::byte>((v >> (8 * i)) & 0xFF));
  }
  void put_f64(double d) { put<std::uint64_t>(std::bit_cast<std::uint64_t>(d)); }
  void put_all(std::span<const double> xs) {
    for (double d : xs) put_f64(d);
  }
  std::vector<std::byte> bytes;
};

class Reader {
 public:
  explicit Reader(std::span<const std::byte> b) : bytes_(b) {}
  template <typename T>
  T get() {
    need(sizeof(T));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(std::to_integer<std::uint8_t>(bytes_[pos_ + i])) << (8 * i);
    pos_ += sizeof(T);
    return v;
  }
  double get_f64() { return std::bit_cast<double>(get<std::uint64_t>()); }
  std::vector<double> get_all(std::size_t n) {
    need(8 * n);
    std::vector<double> out(n);
    for (auto& d : out) d = get_f64();
    return out;
  }
  void skip(std::size_t n) {
    need(n);
    pos_ += n;
  }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) fail(ErrorKind::kParseError, "checkpoint is truncated");
  }
  std::span<const std::byte> bytes_;
  std::size_t pos_ = 0;
};

SquareMatrix matrix_from(std::vector<double> values, std::size_t k) {
  SquareMatrix m(k);
  std::copy(values.begin(), values.end(), m.values().begin());
  return m;
}

}  // namespace

void write_checkpoint(const CheckpointState& s, const std::filesystem::path& path) {
  const std::size_t k = s.k;
  if (s.u.size() != std::size_t(s.num_users) * k || s.v.size() != std::size_t(s.num_movies) * k ||
      s.mu_u.size() != k || s.mu_v.size() != k || s.lambda_u.order() != k || s.lambda_v.order() != k) {
    fail(ErrorKind::kInvalidArgument, "checkpoint state has inconsistent sizes");
  }
  Writer w;
  for (char c : kMagic) w.bytes.push_back(static_cast<std::byte>(c));
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint32_t>(s.k);
  w.put<std::uint32_t>(s.num_users);
  w.put<std::uint32_t>(s.num_movies);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(s.avg_predictions.size()));
  w.put<std::uint32_t>(s.iteration);
  w.put<std::uint32_t>(s.samples);
  w.put<std::uint64_t>(s.seed);
  w.put<std::uint64_t>(s.data_digest);
  w.put<std::uint64_t>(s.config_digest);
  w.put_all(s.u);
  w.put_all(s.v);
  w.put_all(s.mu_u);
  w.put_all(s.lambda_u.values());
  w.put_all(s.mu_v);
  w.put_all(s.lambda_v.values());
  w.put_all(s.avg_predictions);
  w.put<std::uint32_t>(wire::crc32(w.bytes));

  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::kIoError, fmt::format("cannot write {}", tmp.string()));
    out.write(reinterpret_cast<const char*>(w.bytes.data()), static_cast<std::streamsize>(w.bytes.size()));
    if (!out) fail(ErrorKind::kIoError, fmt::format("short write to {}", tmp.string()));
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) fail(ErrorKind::kIoError, fmt::format("cannot move checkpoint into {}: {}", path.string(), ec.message()));
}

CheckpointState read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIoError, fmt::format("cannot open checkpoint {}", path.string()));
  std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::vector<std::byte> bytes(raw.size());
  std::memcpy(bytes.data(), raw.data(), raw.size());
  if (bytes.size() < sizeof(kMagic) + 8 || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    fail(ErrorKind::kParseError, fmt::format("{} is not a checkpoint", path.string()));
  }
  const auto body = std::span<const std::byte>(bytes).first(bytes.size() - 4);
  Reader tail(std::span<const std::byte>(bytes).last(4));
  if (wire::crc32(body) != tail.get<std::uint32_t>()) {
    fail(ErrorKind::kChecksumFailure, fmt::format("checkpoint {} is corrupt", path.string()));
  }
  Reader r(body);
  r.skip(sizeof(kMagic));
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) fail(ErrorKind::kParseError, fmt::format("unsupported checkpoint version {}", version));
  CheckpointState s;
  s.k = r.get<std::uint32_t>();
  s.num_users = r.get<std::uint32_t>();
  s.num_movies = r.get<std::uint32_t>();
  const auto num_test = r.get<std::uint32_t>();
  s.iteration = r.get<std::uint32_t>();
  s.samples = r.get<std::uint32_t>();
  s.seed = r.get<std::uint64_t>();
  s.data_digest = r.get<std::uint64_t>();
  s.config_digest = r.get<std::uint64_t>();
  s.u = r.get_all(std::size_t(s.num_users) * s.k);
  s.v = r.get_all(std::size_t(s.num_movies) * s.k);
  s.mu_u = r.get_all(s.k);
  s.lambda_u = matrix_from(r.get_all(std::size_t(s.k) * s.k), s.k);
  s.mu_v = r.get_all(s.k);
  s.lambda_v = matrix_from(r.get_all(std::size_t(s.k) * s.k), s.k);
  s.avg_predictions = r.get_all(num_test);
  if (r.pos() != body.size()) fail(ErrorKind::kParseError, "checkpoint has trailing bytes");
  return s;
}

std::uint64_t data_digest(const SparseRatings& train, std::span<const Rating> test) {
  std::uint64_t h = mix64(0x4441544144494745ull ^ train.num_users());
  h = mix64(h ^ train.num_movies());
  auto feed = [&h](const Rating& r) {
    h = mix64(h ^ r.user);
    h = mix64(h ^ r.movie);
    h = mix64(h ^ std::bit_cast<std::uint64_t>(r.value));
  };
  for (const auto& r : train.triples()) feed(r);
  h = mix64(h ^ 0x7465737400000000ull ^ test.size());
  for (const auto& r : test) feed(r);
  return h;
}

}  // namespace bpmf
