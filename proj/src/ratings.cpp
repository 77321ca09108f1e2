// Copyright 2026 The bpmf-dist Authors
// SPDX-License-Identifier: Apache-2.0

#include "bpmf/ratings.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

#include <fmt/core.h>

#include "bpmf/error.hpp"
#include "bpmf/exact_sum.hpp"
#include "bpmf/rng.hpp"

namespace bpmf {

// --- Permutation -------------------------------------------------------------

Permutation Permutation::identity(std::size_t n) {
  std::vector<std::uint32_t> order(n);
  std::iota(order.begin(), order.end(), 0u);
  return from_order(std::move(order));
}

Permutation Permutation::from_order(std::vector<std::uint32_t> new_to_old) {
  Permutation p;
  p.old_to_new_.assign(new_to_old.size(), std::numeric_limits<std::uint32_t>::max());
  for (std::size_t i = 0; i < new_to_old.size(); ++i) {
    const std::uint32_t old = new_to_old[i];
    if (old >= new_to_old.size() || p.old_to_new_[old] != std::numeric_limits<std::uint32_t>::max()) {
      fail(ErrorKind::kInvalidArgument, "permutation is not a bijection");
    }
    p.old_to_new_[old] = static_cast<std::uint32_t>(i);
  }
  p.new_to_old_ = std::move(new_to_old);
  return p;
}

bool Permutation::is_identity() const {
  for (std::size_t i = 0; i < new_to_old_.size(); ++i)
    if (new_to_old_[i] != i) return false;
  return true;
}

Permutation Permutation::inverse() const { return from_order(old_to_new_); }

// --- SparseRatings -----------------------------------------------------------

namespace {

void build_index(std::uint32_t n, const std::vector<Rating>& triples, bool by_user,
                 std::vector<std::size_t>& offsets, std::vector<Entry>& entries) {
  offsets.assign(static_cast<std::size_t>(n) + 1, 0);
  for (const Rating& r : triples) ++offsets[(by_user ? r.user : r.movie) + 1];
  std::partial_sum(offsets.begin(), offsets.end(), offsets.begin());
  entries.resize(triples.size());
  std::vector<std::size_t> cursor(offsets.begin(), offsets.end() - 1);
  // Triples arrive sorted by (user, movie), so the by-user lists come out
  // sorted directly and the by-movie lists come out sorted by user.
  for (const Rating& r : triples) {
    const std::uint32_t key = by_user ? r.user : r.movie;
    entries[cursor[key]++] = Entry{by_user ? r.movie : r.user, r.value};
  }
}

}  // namespace

SparseRatings SparseRatings::from_triples(std::uint32_t num_users, std::uint32_t num_movies,
                                          std::vector<Rating> triples) {
  for (const Rating& r : triples) {
    if (r.user >= num_users || r.movie >= num_movies) {
      fail(ErrorKind::kIndexOutOfHeaderBounds,
           fmt::format("entry ({}, {}) outside {}x{}", r.user, r.movie, num_users, num_movies));
    }
    if (!std::isfinite(r.value)) {
      fail(ErrorKind::kInvalidArgument, fmt::format("non-finite rating at ({}, {})", r.user, r.movie));
    }
  }
  std::sort(triples.begin(), triples.end(), [](const Rating& a, const Rating& b) {
    return a.user != b.user ? a.user < b.user : a.movie < b.movie;
  });
  for (std::size_t i = 1; i < triples.size(); ++i) {
    if (triples[i].user == triples[i - 1].user && triples[i].movie == triples[i - 1].movie) {
      fail(ErrorKind::kDuplicateEntry,
           fmt::format("duplicate entry ({}, {})", triples[i].user, triples[i].movie));
    }
  }

  SparseRatings r;
  r.num_users_ = num_users;
  r.num_movies_ = num_movies;
  if (!triples.empty()) {
    ExactSum sum;  // exact, so relabeling cannot move the mean
    r.min_rating_ = triples.front().value;
    r.max_rating_ = triples.front().value;
    for (const Rating& t : triples) {
      sum.add(t.value);
      r.min_rating_ = std::min(r.min_rating_, t.value);
      r.max_rating_ = std::max(r.max_rating_, t.value);
    }
    r.global_mean_ = sum.value() / static_cast<double>(triples.size());
  }
  build_index(num_users, triples, true, r.user_offsets_, r.by_user_);
  build_index(num_movies, triples, false, r.movie_offsets_, r.by_movie_);
  return r;
}

std::vector<Rating> SparseRatings::triples() const {
  std::vector<Rating> out;
  out.reserve(nnz());
  for (std::uint32_t u = 0; u < num_users_; ++u)
    for (const Entry& e : user_ratings(u)) out.push_back({u, e.index, e.value});
  return out;
}

std::vector<Rating> SparseRatings::triples_from_movie_index() const {
  std::vector<Rating> out;
  out.reserve(nnz());
  for (std::uint32_t m = 0; m < num_movies_; ++m)
    for (const Entry& e : movie_ratings(m)) out.push_back({e.index, m, e.value});
  std::sort(out.begin(), out.end(), [](const Rating& a, const Rating& b) {
    return a.user != b.user ? a.user < b.user : a.movie < b.movie;
  });
  return out;
}

SparseRatings SparseRatings::permuted(const Permutation& rows, const Permutation& cols) const {
  if (rows.size() != num_users_ || cols.size() != num_movies_) {
    fail(ErrorKind::kLengthMismatch, "permutation size does not match matrix shape");
  }
  std::vector<Rating> t = triples();
  for (Rating& r : t) {
    r.user = rows.to_new(r.user);
    r.movie = cols.to_new(r.movie);
  }
  return from_triples(num_users_, num_movies_, std::move(t));
}

// --- parsing helpers ---------------------------------------------------------

namespace {

std::string_view trim(std::string_view s) {
  const auto ws = " \t\r\n";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

template <typename T>
bool parse_number(std::string_view s, T& out) {
  s = trim(s);
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

std::vector<std::string_view> split_fields(std::string_view line, std::string_view delim) {
  std::vector<std::string_view> out;
  if (delim == " ") {
    std::size_t i = 0;
    while (i < line.size()) {
      while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
      if (i >= line.size()) break;
      std::size_t j = i;
      while (j < line.size() && line[j] != ' ' && line[j] != '\t') ++j;
      out.push_back(line.substr(i, j - i));
      i = j;
    }
    return out;
  }
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find(delim, start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + delim.size();
  }
}

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kIoError, "cannot open " + path.string());
  return in;
}

}  // namespace

// --- MatrixMarket ------------------------------------------------------------

SparseRatings load_matrix_market(const std::filesystem::path& path) {
  std::ifstream in = open_input(path);
  std::string line;
  std::size_t line_no = 0;

  if (!std::getline(in, line)) throw ParseError(1, "empty file");
  ++line_no;
  {
    std::istringstream hs(line);
    std::string banner, object, format, field, symmetry;
    hs >> banner >> object >> format >> field >> symmetry;
    auto lower = [](std::string s) {
      std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
      return s;
    };
    if (banner != "%%MatrixMarket" || lower(object) != "matrix" || lower(format) != "coordinate" ||
        (lower(field) != "real" && lower(field) != "integer") || lower(symmetry) != "general") {
      throw ParseError(line_no, "expected '%%MatrixMarket matrix coordinate real general'");
    }
  }

  std::uint64_t rows = 0, cols = 0, declared = 0;
  for (;;) {
    if (!std::getline(in, line)) throw ParseError(line_no + 1, "missing size line");
    ++line_no;
    const auto t = trim(line);
    if (t.empty() || t.front() == '%') continue;
    const auto f = split_fields(t, " ");
    if (f.size() != 3 || !parse_number(f[0], rows) || !parse_number(f[1], cols) ||
        !parse_number(f[2], declared)) {
      throw ParseError(line_no, "bad size line");
    }
    break;
  }
  if (rows > std::numeric_limits<std::uint32_t>::max() || cols > std::numeric_limits<std::uint32_t>::max()) {
    throw ParseError(line_no, "matrix dimensions exceed 32-bit indices");
  }

  std::vector<Rating> triples;
  triples.reserve(declared);
  while (std::getline(in, line)) {
    ++line_no;
    const auto t = trim(line);
    if (t.empty() || t.front() == '%') continue;
    const auto f = split_fields(t, " ");
    std::uint64_t i = 0, j = 0;
    double v = 0.0;
    if (f.size() != 3 || !parse_number(f[0], i) || !parse_number(f[1], j) || !parse_number(f[2], v)) {
      throw ParseError(line_no, "expected 'row col value'");
    }
    if (i < 1 || j < 1 || i > rows || j > cols) {
      fail(ErrorKind::kIndexOutOfHeaderBounds,
           fmt::format("line {}: entry ({}, {}) outside header bounds {}x{}", line_no, i, j, rows, cols));
    }
    if (!std::isfinite(v)) throw ParseError(line_no, "non-finite rating");
    triples.push_back({static_cast<std::uint32_t>(i - 1), static_cast<std::uint32_t>(j - 1), v});
  }
  if (triples.size() != declared) {
    throw ParseError(line_no, fmt::format("header declares {} entries, found {}", declared, triples.size()));
  }
  return SparseRatings::from_triples(static_cast<std::uint32_t>(rows), static_cast<std::uint32_t>(cols),
                                     std::move(triples));
}

void save_matrix_market(std::uint32_t num_users, std::uint32_t num_movies, std::span<const Rating> triples,
                        const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::kIoError, "cannot write " + path.string());
  out << "%%MatrixMarket matrix coordinate real general\n";
  out << num_users << ' ' << num_movies << ' ' << triples.size() << '\n';
  for (const Rating& r : triples) out << fmt::format("{} {} {:.17g}\n", r.user + 1, r.movie + 1, r.value);
  if (!out) fail(ErrorKind::kIoError, "write failed for " + path.string());
}

void save_matrix_market(const SparseRatings& ratings, const std::filesystem::path& path) {
  const auto t = ratings.triples();
  save_matrix_market(ratings.num_users(), ratings.num_movies(), t, path);
}

// --- CSV ---------------------------------------------------------------------

CsvSchema CsvSchema::movielens_csv() { return CsvSchema{}; }

CsvSchema CsvSchema::movielens_100k() {
  CsvSchema s;
  s.delimiter = "\t";
  s.has_header = false;
  return s;
}

namespace {

struct IdCompare {
  bool operator()(const std::string& a, const std::string& b) const {
    long long x = 0, y = 0;
    const bool ai = parse_number(a, x);
    const bool bi = parse_number(b, y);
    if (ai && bi) return x < y;
    if (ai != bi) return ai;  // integers first
    return a < b;
  }
};

IdMap dense_ids(const std::vector<std::string_view>& raw, std::vector<std::uint32_t>& dense) {
  std::map<std::string, std::uint32_t, IdCompare> ids;
  for (auto id : raw) ids.emplace(std::string(id), 0);
  IdMap map;
  map.external.reserve(ids.size());
  std::uint32_t next = 0;
  for (auto& [k, v] : ids) {
    v = next++;
    map.external.push_back(k);
  }
  dense.resize(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) dense[i] = ids.find(std::string(raw[i]))->second;
  return map;
}

}  // namespace

LoadedRatings load_ratings_csv(const std::filesystem::path& path, const CsvSchema& schema) {
  if (schema.delimiter.empty()) fail(ErrorKind::kSchemaMismatch, "empty delimiter");
  std::ifstream in = open_input(path);
  std::string line;
  std::size_t line_no = 0;

  std::size_t ucol = schema.user_position, mcol = schema.movie_position, rcol = schema.rating_position;
  if (schema.has_header) {
    if (!std::getline(in, line)) fail(ErrorKind::kSchemaMismatch, "missing header row");
    ++line_no;
    const auto header = split_fields(trim(line), schema.delimiter);
    auto find = [&](const std::string& name) {
      for (std::size_t i = 0; i < header.size(); ++i)
        if (trim(header[i]) == name) return i;
      fail(ErrorKind::kSchemaMismatch, "header lacks column '" + name + "'");
    };
    ucol = find(schema.user_column);
    mcol = find(schema.movie_column);
    rcol = find(schema.rating_column);
  }
  const std::size_t needed = std::max({ucol, mcol, rcol}) + 1;

  // Keep every line alive so the ids can be views into it.
  std::vector<std::string> lines;
  std::vector<std::size_t> line_numbers;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    lines.push_back(std::move(line));
    line_numbers.push_back(line_no);
  }

  std::vector<std::string_view> user_raw, movie_raw;
  std::vector<double> values;
  user_raw.reserve(lines.size());
  movie_raw.reserve(lines.size());
  values.reserve(lines.size());
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto f = split_fields(trim(lines[i]), schema.delimiter);
    if (f.size() < needed) {
      if (!schema.has_header && i == 0) fail(ErrorKind::kSchemaMismatch, "too few columns in first row");
      throw ParseError(line_numbers[i], fmt::format("expected at least {} fields", needed));
    }
    double v = 0.0;
    if (!parse_number(f[rcol], v) || !std::isfinite(v)) {
      throw ParseError(line_numbers[i], "rating '" + std::string(f[rcol]) + "' is not a number");
    }
    const auto u = trim(f[ucol]);
    const auto m = trim(f[mcol]);
    if (u.empty() || m.empty()) throw ParseError(line_numbers[i], "empty id");
    user_raw.push_back(u);
    movie_raw.push_back(m);
    values.push_back(v);
  }

  LoadedRatings out;
  std::vector<std::uint32_t> users, movies;
  out.users = dense_ids(user_raw, users);
  out.movies = dense_ids(movie_raw, movies);
  std::vector<Rating> triples(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) triples[i] = {users[i], movies[i], values[i]};
  out.ratings = SparseRatings::from_triples(static_cast<std::uint32_t>(out.users.external.size()),
                                            static_cast<std::uint32_t>(out.movies.external.size()),
                                            std::move(triples));
  return out;
}

void write_id_map(const IdMap& map, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::kIoError, "cannot write " + path.string());
  out << "external_id,index\n";
  for (std::size_t i = 0; i < map.external.size(); ++i) out << map.external[i] << ',' << i << '\n';
  if (!out) fail(ErrorKind::kIoError, "write failed for " + path.string());
}

IdMap read_id_map(const std::filesystem::path& path) {
  std::ifstream in = open_input(path);
  std::string line;
  std::size_t line_no = 1;
  if (!std::getline(in, line) || trim(line) != "external_id,index") {
    fail(ErrorKind::kSchemaMismatch, "id map header must be 'external_id,index'");
  }
  IdMap map;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto pos = line.rfind(',');
    std::size_t idx = 0;
    if (pos == std::string::npos || !parse_number(std::string_view(line).substr(pos + 1), idx) ||
        idx != map.external.size()) {
      throw ParseError(line_no, "expected 'external_id,index' with consecutive indices");
    }
    map.external.push_back(line.substr(0, pos));
  }
  return map;
}

// --- split -------------------------------------------------------------------

RatingsSplit split_train_test(const SparseRatings& ratings, double test_fraction, std::uint64_t seed,
                              const SplitOptions& options) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    fail(ErrorKind::kInvalidArgument, "test fraction must lie in (0, 1)");
  }
  if (ratings.nnz() < 10) {
    fail(ErrorKind::kTooSparse, fmt::format("split needs at least 10 ratings, have {}", ratings.nnz()));
  }
  const std::vector<Rating> all = ratings.triples();
  const std::size_t target = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(all.size())));

  std::vector<std::pair<std::uint64_t, std::uint32_t>> order(all.size());
  for (std::uint32_t i = 0; i < all.size(); ++i) {
    CounterRng rng(seed, {0, Purpose::kSplit, i});
    order[i] = {rng.next_u64(), i};
  }
  std::sort(order.begin(), order.end());

  std::vector<std::size_t> user_left(ratings.num_users()), movie_left(ratings.num_movies());
  for (std::uint32_t u = 0; u < ratings.num_users(); ++u) user_left[u] = ratings.user_degree(u);
  for (std::uint32_t m = 0; m < ratings.num_movies(); ++m) movie_left[m] = ratings.movie_degree(m);

  std::vector<char> in_test(all.size(), 0);
  std::size_t taken = 0;
  for (const auto& [key, i] : order) {
    if (taken == target) break;
    const Rating& r = all[i];
    if (user_left[r.user] > 1 && movie_left[r.movie] > 1) {
      in_test[i] = 1;
      --user_left[r.user];
      --movie_left[r.movie];
      ++taken;
    }
  }
  if (taken < target) {
    if (options.strict_coverage) {
      fail(ErrorKind::kTooSparse,
           fmt::format("only {} of {} test ratings can be held out with full coverage", taken, target));
    }
    for (const auto& [key, i] : order) {
      if (taken == target) break;
      if (!in_test[i]) {
        in_test[i] = 1;
        ++taken;
      }
    }
  }

  RatingsSplit split;
  std::vector<Rating> train;
  train.reserve(all.size() - target);
  split.test.reserve(target);
  for (std::size_t i = 0; i < all.size(); ++i) (in_test[i] ? split.test : train).push_back(all[i]);
  split.train = SparseRatings::from_triples(ratings.num_users(), ratings.num_movies(), std::move(train));
  return split;
}

}  // namespace bpmf
