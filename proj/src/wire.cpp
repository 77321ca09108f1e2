// Copyright 2026 The bpmf-dist Authors
// SPDX-License-Identifier: Apache-2.0

#include "bpmf/wire.hpp"

#include <bit>
#include <cstring>

#include <fmt/core.h>
#include <zlib.h>

#include "bpmf/error.hpp"
#include "bpmf/rng.hpp"

namespace bpmf::wire {

namespace {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <typename T>
void put_le(std::vector<std::byte>& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::byte>((v >> (8 * i)) & 0xFF));
}

template <typename T>
T get_le(const std::byte* p) {
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(std::to_integer<std::uint8_t>(p[i])) << (8 * i);
  return v;
}

}  // namespace

std::uint32_t crc32(std::span<const std::byte> bytes) {
  uLong c = ::crc32(0L, Z_NULL, 0);
  c = ::crc32(c, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size()));
  return static_cast<std::uint32_t>(c);
}

void append_frame(std::vector<std::byte>& out, ItemMessage& msg) {
  if (msg.payload.size() > kMaxPayload) fail(ErrorKind::kInvalidArgument, "frame payload too large");
  const std::size_t start = out.size();
  out.reserve(start + frame_size(static_cast<std::uint32_t>(msg.payload.size())));
  out.insert(out.end(), kMagic.begin(), kMagic.end());
  out.push_back(std::byte{kVersion});
  out.push_back(static_cast<std::byte>(msg.phase));
  put_le<std::uint32_t>(out, msg.iteration);
  put_le<std::uint32_t>(out, msg.index);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(msg.payload.size()));
  for (double d : msg.payload) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(d));
  msg.checksum = crc32(std::span<const std::byte>(out).subspan(start));
  put_le<std::uint32_t>(out, msg.checksum);
}

std::vector<std::byte> encode_frame(const ItemMessage& msg) {
  std::vector<std::byte> out;
  ItemMessage copy = msg;
  append_frame(out, copy);
  return out;
}

std::optional<std::size_t> peek_frame_size(std::span<const std::byte> bytes) {
  if (bytes.size() < kHeaderSize) return std::nullopt;
  if (std::memcmp(bytes.data(), kMagic.data(), kMagic.size()) != 0) fail(ErrorKind::kParseError, "bad frame magic");
  if (std::to_integer<std::uint8_t>(bytes[4]) != kVersion) {
    fail(ErrorKind::kParseError, fmt::format("unsupported frame version {}", std::to_integer<int>(bytes[4])));
  }
  const auto k = get_le<std::uint32_t>(bytes.data() + 14);
  if (k > kMaxPayload) fail(ErrorKind::kParseError, "frame payload length out of range");
  return frame_size(k);
}

FrameHeader peek_header(std::span<const std::byte> bytes) {
  if (bytes.size() < kHeaderSize) fail(ErrorKind::kParseError, "truncated frame header");
  const std::byte* p = bytes.data();
  return {std::to_integer<std::uint8_t>(p[5]), get_le<std::uint32_t>(p + 6), get_le<std::uint32_t>(p + 10),
          get_le<std::uint32_t>(p + 14)};
}

ItemMessage decode_frame(std::span<const std::byte> frame) {
  const auto size = peek_frame_size(frame);
  if (!size || frame.size() != *size) fail(ErrorKind::kParseError, "truncated frame");
  const std::byte* p = frame.data();
  ItemMessage msg;
  const auto phase = std::to_integer<std::uint8_t>(p[5]);
  msg.iteration = get_le<std::uint32_t>(p + 6);
  msg.index = get_le<std::uint32_t>(p + 10);
  const auto k = get_le<std::uint32_t>(p + 14);
  msg.checksum = get_le<std::uint32_t>(p + kHeaderSize + 8 * std::size_t(k));
  if (crc32(frame.first(kHeaderSize + 8 * std::size_t(k))) != msg.checksum) {
    fail(ErrorKind::kChecksumFailure,
         fmt::format("checksum mismatch for phase {} iteration {} item {}", phase, msg.iteration, msg.index));
  }
  if (phase >= kChannelCount) fail(ErrorKind::kParseError, fmt::format("unknown phase byte {}", phase));
  msg.phase = static_cast<Channel>(phase);
  msg.payload.resize(k);
  for (std::uint32_t i = 0; i < k; ++i) msg.payload[i] = std::bit_cast<double>(get_le<std::uint64_t>(p + kHeaderSize + 8 * i));
  return msg;
}

std::vector<ItemMessage> decode_frames(std::span<const std::byte> bytes) {
  std::vector<ItemMessage> out;
  std::size_t pos = 0;
  while (pos < bytes.size()) {
    const auto size = peek_frame_size(bytes.subspan(pos));
    if (!size || pos + *size > bytes.size()) fail(ErrorKind::kParseError, "truncated frame in batch");
    out.push_back(decode_frame(bytes.subspan(pos, *size)));
    pos += *size;
  }
  return out;
}

std::array<std::byte, kHandshakeSize> encode_handshake(const Handshake& h) {
  std::vector<std::byte> v = {std::byte{'B'}, std::byte{'P'}, std::byte{'M'}, std::byte{'H'}, std::byte{kVersion}};
  put_le<std::uint32_t>(v, h.node_id);
  put_le<std::uint32_t>(v, h.node_count);
  put_le<std::uint32_t>(v, h.k);
  put_le<std::uint64_t>(v, h.seed_digest);
  std::array<std::byte, kHandshakeSize> out{};
  std::memcpy(out.data(), v.data(), kHandshakeSize);
  return out;
}

Handshake decode_handshake(std::span<const std::byte> b) {
  static constexpr char kTag[4] = {'B', 'P', 'M', 'H'};
  if (b.size() != kHandshakeSize || std::memcmp(b.data(), kTag, 4) != 0) {
    fail(ErrorKind::kHandshakeMismatch, "malformed handshake");
  }
  if (std::to_integer<std::uint8_t>(b[4]) != kVersion) fail(ErrorKind::kHandshakeMismatch, "handshake version mismatch");
  Handshake h;
  h.node_id = get_le<std::uint32_t>(b.data() + 5);
  h.node_count = get_le<std::uint32_t>(b.data() + 9);
  h.k = get_le<std::uint32_t>(b.data() + 13);
  h.seed_digest = get_le<std::uint64_t>(b.data() + 17);
  return h;
}

std::uint64_t seed_digest(std::uint64_t seed) { return mix64(seed ^ 0x42504D4653454544ull); }

}  // namespace bpmf::wire
