// Copyright 2026 The bpmf-dist Authors
// SPDX-License-Identifier: Apache-2.0

// Counter-based random numbers. Every draw is a pure function of
// (seed, stream key, draw counter), so the sampled chain does not depend on
// which thread or node happens to update an item.

#pragma once

#include <array>
#include <cstdint>

namespace bpmf {

/// Philox4x32-10 block function: 128-bit counter, 64-bit key.
std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> counter,
                                        std::array<std::uint32_t, 2> key);

/// What a stream of draws is used for; doubles as the phase id in stream keys.
enum class Purpose : std::uint32_t {
  kMovieUpdate = 0,
  kUserUpdate = 1,
  kMovieHyper = 2,
  kUserHyper = 3,
  kSplit = 4,
  kSynthetic = 5,
  kCalibration = 6,
  kTest = 7,
};

struct StreamKey {
  std::uint32_t iteration = 0;
  Purpose purpose = Purpose::kTest;
  std::uint32_t index = 0;
};

class CounterRng {
 public:
  CounterRng(std::uint64_t seed, StreamKey key) : seed_(seed), key_(key) {}

  std::uint64_t seed() const noexcept { return seed_; }
  StreamKey key() const noexcept { return key_; }
  std::uint32_t draws() const noexcept { return counter_; }

  std::uint64_t next_u64();
  /// Uniform on the open interval (0, 1).
  double uniform();
  /// Standard normal via Box-Muller; both outputs of a pair are used.
  double normal();

 private:
  void refill();

  std::uint64_t seed_;
  StreamKey key_;
  std::uint32_t counter_ = 0;
  std::array<std::uint32_t, 4> block_{};
  int block_pos_ = 4;
  bool has_spare_normal_ = false;
  double spare_normal_ = 0.0;
};

/// SplitMix64 finalizer; used for seed digests and hashing keys.
std::uint64_t mix64(std::uint64_t x);

}  // namespace bpmf
