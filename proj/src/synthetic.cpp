// Copyright 2026 The bpmf-dist Authors
// SPDX-License-Identifier: Apache-2.0

#include "bpmf/synthetic.hpp"

#include <algorithm>
#include <cmath>

#include "bpmf/error.hpp"
#include "bpmf/rng.hpp"

namespace bpmf {

namespace {

// Stream sub-ranges inside Purpose::kSynthetic.
constexpr std::uint32_t kUserFactorStream = 0;
constexpr std::uint32_t kMovieFactorStream = 1;
constexpr std::uint32_t kPatternStream = 2;
constexpr std::uint32_t kShuffleStream = 3;

std::vector<std::uint32_t> seeded_shuffle(std::uint32_t n, std::uint64_t seed, std::uint32_t stream) {
  std::vector<std::pair<std::uint64_t, std::uint32_t>> keys(n);
  for (std::uint32_t i = 0; i < n; ++i) keys[i] = {CounterRng(seed, {stream, Purpose::kSynthetic, i}).next_u64(), i};
  std::sort(keys.begin(), keys.end());
  std::vector<std::uint32_t> order(n);
  for (std::uint32_t i = 0; i < n; ++i) order[i] = keys[i].second;
  return order;
}

}  // namespace

PlantedData generate_planted(const PlantedOptions& o) {
  if (o.rank == 0 || o.users == 0 || o.movies == 0) fail(ErrorKind::kInvalidArgument, "empty planted model");
  if (!(o.density > 0.0 && o.density <= 1.0)) fail(ErrorKind::kInvalidArgument, "density must lie in (0, 1]");

  PlantedData d;
  d.rank = o.rank;
  const double sd = std::pow(static_cast<double>(o.rank), -0.25);
  d.user_factors.resize(static_cast<std::size_t>(o.users) * o.rank);
  d.movie_factors.resize(static_cast<std::size_t>(o.movies) * o.rank);
  for (std::uint32_t u = 0; u < o.users; ++u) {
    CounterRng rng(o.seed, {kUserFactorStream, Purpose::kSynthetic, u});
    for (std::uint32_t k = 0; k < o.rank; ++k) d.user_factors[std::size_t(u) * o.rank + k] = sd * rng.normal();
  }
  for (std::uint32_t m = 0; m < o.movies; ++m) {
    CounterRng rng(o.seed, {kMovieFactorStream, Purpose::kSynthetic, m});
    for (std::uint32_t k = 0; k < o.rank; ++k) d.movie_factors[std::size_t(m) * o.rank + k] = sd * rng.normal();
  }

  std::vector<Rating> triples;
  for (std::uint32_t u = 0; u < o.users; ++u) {
    CounterRng rng(o.seed, {kPatternStream, Purpose::kSynthetic, u});
    for (std::uint32_t m = 0; m < o.movies; ++m) {
      const bool observed = rng.uniform() < o.density;
      const double noise = rng.normal();
      if (!observed) continue;
      double r = o.offset + o.noise_sd * noise;
      for (std::uint32_t k = 0; k < o.rank; ++k)
        r += d.user_factors[std::size_t(u) * o.rank + k] * d.movie_factors[std::size_t(m) * o.rank + k];
      triples.push_back({u, m, r});
    }
  }
  d.ratings = SparseRatings::from_triples(o.users, o.movies, std::move(triples));
  return d;
}

BlockData generate_blocks(const BlockOptions& o) {
  if (o.blocks == 0 || o.blocks > o.users || o.blocks > o.movies) {
    fail(ErrorKind::kInvalidArgument, "block count must be in [1, min(users, movies)]");
  }
  auto block_of = [&](std::uint32_t i, std::uint32_t n) {
    return static_cast<std::uint32_t>((static_cast<std::uint64_t>(i) * o.blocks) / n);
  };
  std::vector<std::uint32_t> user_label(o.users), movie_label(o.movies);
  if (o.shuffle) {
    const auto us = seeded_shuffle(o.users, o.seed, kShuffleStream);
    const auto ms = seeded_shuffle(o.movies, o.seed, kShuffleStream + 1);
    for (std::uint32_t i = 0; i < o.users; ++i) user_label[us[i]] = i;
    for (std::uint32_t i = 0; i < o.movies; ++i) movie_label[ms[i]] = i;
  } else {
    for (std::uint32_t i = 0; i < o.users; ++i) user_label[i] = i;
    for (std::uint32_t i = 0; i < o.movies; ++i) movie_label[i] = i;
  }

  BlockData d;
  d.user_block.resize(o.users);
  d.movie_block.resize(o.movies);
  std::vector<Rating> triples;
  for (std::uint32_t u = 0; u < o.users; ++u) {
    const std::uint32_t bu = block_of(u, o.users);
    d.user_block[user_label[u]] = bu;
    CounterRng rng(o.seed, {kPatternStream, Purpose::kSynthetic, u});
    for (std::uint32_t m = 0; m < o.movies; ++m) {
      const std::uint32_t bm = block_of(m, o.movies);
      const double p = bu == bm ? o.in_block_density : o.off_block_density;
      const double draw = rng.uniform();
      if (draw < p) triples.push_back({user_label[u], movie_label[m], 1.0 + static_cast<double>(bu)});
    }
  }
  for (std::uint32_t m = 0; m < o.movies; ++m) d.movie_block[movie_label[m]] = block_of(m, o.movies);
  d.ratings = SparseRatings::from_triples(o.users, o.movies, std::move(triples));
  return d;
}

}  // namespace bpmf
