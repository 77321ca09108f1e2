// Copyright 2026 The bpmf-dist Authors
// SPDX-License-Identifier: Apache-2.0

// Writes planted low-rank or block-structured rating matrices as
// MatrixMarket files.

#include <iostream>

#include "CLI11.hpp"
#include "bpmf/error.hpp"
#include "bpmf/synthetic.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Generate synthetic rating matrices.", "bpmf-synth"};
  std::string kind = "planted";
  std::string out;
  bpmf::PlantedOptions planted;
  bpmf::BlockOptions blocks;
  std::uint64_t seed = 1;
  app.add_option("--kind", kind, "planted or blocks")->check(CLI::IsMember({"planted", "blocks"}))->capture_default_str();
  app.add_option("--out", out, "output .mtx path")->required();
  app.add_option("--users", planted.users, "rows")->capture_default_str();
  app.add_option("--movies", planted.movies, "columns")->capture_default_str();
  app.add_option("--rank", planted.rank, "planted rank")->capture_default_str();
  app.add_option("--density", planted.density, "observed share of entries")->capture_default_str();
  app.add_option("--noise", planted.noise_sd, "rating noise standard deviation")->capture_default_str();
  app.add_option("--offset", planted.offset, "constant added to every rating")->capture_default_str();
  app.add_option("--blocks", blocks.blocks, "diagonal blocks (blocks kind)")->capture_default_str();
  app.add_option("--off-density", blocks.off_block_density, "density outside blocks (blocks kind)")
      ->capture_default_str();
  app.add_option("--seed", seed, "random seed")->capture_default_str();
  CLI11_PARSE(app, argc, argv);

  try {
    if (kind == "planted") {
      planted.seed = seed;
      const auto data = bpmf::generate_planted(planted);
      bpmf::save_matrix_market(data.ratings, out);
      std::cout << "wrote " << data.ratings.nnz() << " ratings to " << out << "\n";
    } else {
      blocks.users = planted.users;
      blocks.movies = planted.movies;
      blocks.in_block_density = planted.density;
      blocks.seed = seed;
      const auto data = bpmf::generate_blocks(blocks);
      bpmf::save_matrix_market(data.ratings, out);
      std::cout << "wrote " << data.ratings.nnz() << " ratings to " << out << "\n";
    }
  } catch (const bpmf::Error& e) {
    std::cerr << "bpmf-synth: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
