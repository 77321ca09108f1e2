// Copyright 2026 The bpmf-dist Authors
// SPDX-License-Identifier: Apache-2.0

// Byte-exact frame format shared by every transport backend:
//
//   magic "BPMF" (4) | version u8 | phase u8 | iteration u32 LE |
//   item index u32 LE | k u32 LE | k x f64 LE payload | CRC32 LE
//
// CRC32 (IEEE, zlib polynomial) covers every preceding byte of the frame.
// Frames carry their own length through k, so a stream of frames needs no
// extra length prefix.

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace bpmf {

/// Value of the frame's phase byte. Item traffic uses the phase of the side
/// being updated; the other values carry the collective steps of a run.
enum class Channel : std::uint8_t {
  kMovieItems = 0,
  kUserItems = 1,
  kMovieAggregate = 2,
  kUserAggregate = 3,
  kEvaluation = 4,
  kGatherMovies = 5,
  kGatherUsers = 6,
  kGatherPredictions = 7,
};
inline constexpr std::uint8_t kChannelCount = 8;

/// Item index of the frame that closes one sender's contribution to a
/// (channel, iteration).
inline constexpr std::uint32_t kEndMarker = 0xFFFFFFFFu;

struct ItemMessage {
  std::uint32_t iteration = 0;
  Channel phase = Channel::kMovieItems;
  std::uint32_t index = 0;
  std::vector<double> payload;
  std::uint32_t checksum = 0;  // filled on encode and decode

  bool is_marker() const noexcept { return index == kEndMarker; }
};

namespace wire {

inline constexpr std::array<std::byte, 4> kMagic = {std::byte{'B'}, std::byte{'P'}, std::byte{'M'}, std::byte{'F'}};
inline constexpr std::uint8_t kVersion = 1;
inline constexpr std::size_t kHeaderSize = 18;
inline constexpr std::size_t kTrailerSize = 4;
inline constexpr std::uint32_t kMaxPayload = 1u << 24;

constexpr std::size_t frame_size(std::uint32_t k) { return kHeaderSize + 8 * std::size_t(k) + kTrailerSize; }

std::uint32_t crc32(std::span<const std::byte> bytes);

/// Appends one frame; sets msg.checksum.
void append_frame(std::vector<std::byte>& out, ItemMessage& msg);
std::vector<std::byte> encode_frame(const ItemMessage& msg);

/// Total frame length from a buffer holding at least the header, or nullopt
/// if fewer than kHeaderSize bytes are present.
/// Throws Error(kParseError) on a bad magic, version or oversized k.
std::optional<std::size_t> peek_frame_size(std::span<const std::byte> bytes);

struct FrameHeader {
  std::uint8_t phase = 0;
  std::uint32_t iteration = 0;
  std::uint32_t index = 0;
  std::uint32_t k = 0;
};

/// Header fields without checksum validation; used for diagnostics on
/// frames that fail to decode. Requires kHeaderSize bytes.
FrameHeader peek_header(std::span<const std::byte> bytes);

/// Decodes exactly one frame. Throws Error(kChecksumFailure) on CRC mismatch.
ItemMessage decode_frame(std::span<const std::byte> frame);

/// Splits a buffer of whole frames.
std::vector<ItemMessage> decode_frames(std::span<const std::byte> bytes);

/// Connection handshake: "BPMH" | version u8 | node id u32 | node count u32 |
/// k u32 | seed digest u64, all little-endian (25 bytes).
struct Handshake {
  std::uint32_t node_id = 0;
  std::uint32_t node_count = 0;
  std::uint32_t k = 0;
  std::uint64_t seed_digest = 0;

  bool operator==(const Handshake&) const = default;
};
inline constexpr std::size_t kHandshakeSize = 25;

std::array<std::byte, kHandshakeSize> encode_handshake(const Handshake& h);
Handshake decode_handshake(std::span<const std::byte> bytes);

std::uint64_t seed_digest(std::uint64_t seed);

}  // namespace wire
}  // namespace bpmf
