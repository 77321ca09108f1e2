// Copyright 2026 The bpmf-dist Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>

#include "bpmf/ratings.hpp"

namespace testutil {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("bpmf-" + tag + "-" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream(p, std::ios::trunc) << text;
}

inline std::filesystem::path source_path(const std::string& rel) { return std::filesystem::path(BPMF_SOURCE_DIR) / rel; }

/// Uniformly random sparse matrix with exactly `nnz` distinct entries.
inline bpmf::SparseRatings random_ratings(std::uint32_t users, std::uint32_t movies, std::size_t nnz,
                                          std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::vector<std::uint64_t> cells(std::size_t(users) * movies);
  for (std::size_t i = 0; i < cells.size(); ++i) cells[i] = i;
  std::shuffle(cells.begin(), cells.end(), gen);
  std::uniform_int_distribution<int> stars(1, 5);
  std::vector<bpmf::Rating> t;
  for (std::size_t i = 0; i < nnz; ++i) {
    t.push_back({static_cast<std::uint32_t>(cells[i] / movies), static_cast<std::uint32_t>(cells[i] % movies),
                 double(stars(gen))});
  }
  return bpmf::SparseRatings::from_triples(users, movies, std::move(t));
}

}  // namespace testutil
