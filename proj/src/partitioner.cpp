// Copyright 2026 The bpmf-dist Authors
// SPDX-License-Identifier: Apache-2.0

#include "bpmf/partitioner.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include <fmt/core.h>

#include "bpmf/error.hpp"
#include "bpmf/rng.hpp"
#include "json.hpp"

namespace bpmf {

// --- locality ----------------------------------------------------------------

double locality_score(const SparseRatings& r) {
  double total = 0.0;
  std::size_t pairs = 0;
  auto walk = [&](std::span<const Entry> list) {
    for (std::size_t i = 1; i < list.size(); ++i) {
      total += static_cast<double>(list[i].index - list[i - 1].index);
      ++pairs;
    }
  };
  for (std::uint32_t u = 0; u < r.num_users(); ++u) walk(r.user_ratings(u));
  for (std::uint32_t m = 0; m < r.num_movies(); ++m) walk(r.movie_ratings(m));
  return pairs == 0 ? 0.0 : total / static_cast<double>(pairs);
}

namespace {

class Bisector {
 public:
  Bisector(const SparseRatings& r, const ReorderOptions& o)
      : r_(r), o_(o), col_local_(r.num_movies(), kNone) {}

  void run(std::vector<std::uint32_t> rows, std::vector<std::uint32_t> cols, std::size_t depth) {
    // Local bipartite graph restricted to (rows, cols).
    for (std::uint32_t i = 0; i < cols.size(); ++i) col_local_[cols[i]] = i;
    std::vector<std::size_t> offsets(rows.size() + 1, 0);
    std::vector<std::uint32_t> adj;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      for (const Entry& e : r_.user_ratings(rows[i]))
        if (col_local_[e.index] != kNone) adj.push_back(col_local_[e.index]);
      offsets[i + 1] = adj.size();
    }
    for (std::uint32_t c : cols) col_local_[c] = kNone;

    std::vector<double> dr(rows.size()), dc(cols.size(), 0.0);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      dr[i] = static_cast<double>(offsets[i + 1] - offsets[i]);
      for (std::size_t e = offsets[i]; e < offsets[i + 1]; ++e) dc[adj[e]] += 1.0;
    }

    std::vector<std::uint32_t> active_rows, active_cols, lone_rows, lone_cols;
    std::vector<std::uint32_t> row_pos(rows.size()), col_pos(cols.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (dr[i] > 0) {
        row_pos[i] = static_cast<std::uint32_t>(active_rows.size());
        active_rows.push_back(static_cast<std::uint32_t>(i));
      } else {
        lone_rows.push_back(rows[i]);
      }
    }
    for (std::size_t j = 0; j < cols.size(); ++j) {
      if (dc[j] > 0) {
        col_pos[j] = static_cast<std::uint32_t>(active_cols.size());
        active_cols.push_back(static_cast<std::uint32_t>(j));
      } else {
        lone_cols.push_back(cols[j]);
      }
    }

    const std::size_t active = active_rows.size() + active_cols.size();
    if (active <= o_.leaf_size || depth >= o_.max_depth || active_rows.empty()) {
      emit(rows, cols, active_rows, active_cols, lone_rows, lone_cols);
      return;
    }

    // Power iteration on An^T An with An = Dr^-1/2 A Dc^-1/2, deflated
    // against the trivial singular vector sqrt(dc).
    const std::size_t nc = active_cols.size();
    std::vector<double> v1(nc), x(nc), xn(nc), y(rows.size());
    double n1 = 0.0;
    for (std::size_t j = 0; j < nc; ++j) {
      v1[j] = std::sqrt(dc[active_cols[j]]);
      n1 += v1[j] * v1[j];
    }
    n1 = std::sqrt(n1);
    for (double& v : v1) v /= n1;
    for (std::size_t j = 0; j < nc; ++j) {
      x[j] = static_cast<double>(mix64(cols[active_cols[j]]) >> 11) * 0x1.0p-53 - 0.5;
    }
    auto deflate_normalize = [&](std::vector<double>& w) {
      double p = 0.0;
      for (std::size_t j = 0; j < nc; ++j) p += w[j] * v1[j];
      double nn = 0.0;
      for (std::size_t j = 0; j < nc; ++j) {
        w[j] -= p * v1[j];
        nn += w[j] * w[j];
      }
      nn = std::sqrt(nn);
      if (nn > 0.0)
        for (double& v : w) v /= nn;
      return nn;
    };
    auto apply_an = [&](const std::vector<double>& w) {
      for (std::size_t i : active_rows) {
        double s = 0.0;
        for (std::size_t e = offsets[i]; e < offsets[i + 1]; ++e) s += w[col_pos[adj[e]]] / std::sqrt(dc[adj[e]]);
        y[i] = s / std::sqrt(dr[i]);
      }
    };
    if (deflate_normalize(x) == 0.0) {
      emit(rows, cols, active_rows, active_cols, lone_rows, lone_cols);
      return;
    }
    for (std::size_t it = 0; it < o_.power_iterations; ++it) {
      apply_an(x);
      std::fill(xn.begin(), xn.end(), 0.0);
      for (std::size_t i : active_rows) {
        const double yi = y[i] / std::sqrt(dr[i]);
        for (std::size_t e = offsets[i]; e < offsets[i + 1]; ++e) xn[col_pos[adj[e]]] += yi / std::sqrt(dc[adj[e]]);
      }
      if (deflate_normalize(xn) == 0.0) break;
      double change = 0.0;
      for (std::size_t j = 0; j < nc; ++j) change = std::max(change, std::abs(xn[j] - x[j]));
      x.swap(xn);
      if (change < 1e-10) break;
    }
    apply_an(x);
    double ny = 0.0;
    for (std::size_t i : active_rows) ny += y[i] * y[i];
    ny = ny > 0.0 ? std::sqrt(ny) : 1.0;

    struct Node {
      double z;
      bool is_col;
      std::uint32_t id;  // global index
      std::uint32_t local;
    };
    std::vector<Node> nodes;
    nodes.reserve(active);
    for (std::size_t i : active_rows) nodes.push_back({y[i] / ny / std::sqrt(dr[i]), false, rows[i], static_cast<std::uint32_t>(i)});
    for (std::size_t j = 0; j < nc; ++j) {
      const std::uint32_t lj = active_cols[j];
      nodes.push_back({x[j] / std::sqrt(dc[lj]), true, cols[lj], lj});
    }
    std::sort(nodes.begin(), nodes.end(), [](const Node& a, const Node& b) {
      if (a.z != b.z) return a.z < b.z;
      if (a.is_col != b.is_col) return !a.is_col;
      return a.id < b.id;
    });

    const std::size_t half = sweep_cut(nodes, offsets, adj, rows.size(), cols.size());
    std::vector<std::uint32_t> rows_a, cols_a, rows_b, cols_b;
    for (std::size_t p = 0; p < nodes.size(); ++p) {
      auto& rr = p < half ? rows_a : rows_b;
      auto& cc = p < half ? cols_a : cols_b;
      (nodes[p].is_col ? cc : rr).push_back(nodes[p].id);
    }
    rows = {};
    cols = {};
    run(std::move(rows_a), std::move(cols_a), depth + 1);
    run(std::move(rows_b), std::move(cols_b), depth + 1);
    out_rows_.insert(out_rows_.end(), lone_rows.begin(), lone_rows.end());
    out_cols_.insert(out_cols_.end(), lone_cols.begin(), lone_cols.end());
  }

  std::vector<std::uint32_t> take_rows() { return std::move(out_rows_); }
  std::vector<std::uint32_t> take_cols() { return std::move(out_cols_); }

 private:
  static constexpr std::uint32_t kNone = std::numeric_limits<std::uint32_t>::max();

  // Split position along the spectral order with the lowest ratio cut
  // (crossing edges / (|A| |B|)) inside the middle three fifths. With several
  // planted blocks the leading vector can place two blocks close together, and
  // a plain median split would then cut through one of them.
  template <typename NodeT>
  static std::size_t sweep_cut(const std::vector<NodeT>& nodes, const std::vector<std::size_t>& offsets,
                               const std::vector<std::uint32_t>& adj, std::size_t num_rows, std::size_t num_cols) {
    const std::size_t n = nodes.size();
    std::vector<std::size_t> col_offsets(num_cols + 1, 0);
    for (std::uint32_t c : adj) ++col_offsets[c + 1];
    for (std::size_t j = 0; j < num_cols; ++j) col_offsets[j + 1] += col_offsets[j];
    std::vector<std::uint32_t> col_adj(adj.size());
    {
      std::vector<std::size_t> fill(col_offsets.begin(), col_offsets.end() - 1);
      for (std::size_t i = 0; i < num_rows; ++i)
        for (std::size_t e = offsets[i]; e < offsets[i + 1]; ++e) col_adj[fill[adj[e]]++] = static_cast<std::uint32_t>(i);
    }
    std::vector<char> row_in(num_rows, 0), col_in(num_cols, 0);
    const std::size_t lo = std::max<std::size_t>(1, n / 5), hi = n - std::max<std::size_t>(1, n / 5);
    std::size_t best = n / 2;
    double best_score = std::numeric_limits<double>::infinity();
    long long cut = 0;
    for (std::size_t p = 1; p < n; ++p) {
      const auto& nd = nodes[p - 1];
      if (nd.is_col) {
        col_in[nd.local] = 1;
        for (std::size_t e = col_offsets[nd.local]; e < col_offsets[nd.local + 1]; ++e) cut += row_in[col_adj[e]] ? -1 : 1;
      } else {
        row_in[nd.local] = 1;
        for (std::size_t e = offsets[nd.local]; e < offsets[nd.local + 1]; ++e) cut += col_in[adj[e]] ? -1 : 1;
      }
      if (p < lo || p > hi) continue;
      const double score = static_cast<double>(cut) / (static_cast<double>(p) * static_cast<double>(n - p));
      if (score < best_score) {
        best_score = score;
        best = p;
      }
    }
    return best;
  }

  void emit(const std::vector<std::uint32_t>& rows, const std::vector<std::uint32_t>& cols,
            const std::vector<std::uint32_t>& active_rows, const std::vector<std::uint32_t>& active_cols,
            const std::vector<std::uint32_t>& lone_rows, const std::vector<std::uint32_t>& lone_cols) {
    std::vector<std::uint32_t> ar, ac;
    for (auto i : active_rows) ar.push_back(rows[i]);
    for (auto j : active_cols) ac.push_back(cols[j]);
    std::sort(ar.begin(), ar.end());
    std::sort(ac.begin(), ac.end());
    out_rows_.insert(out_rows_.end(), ar.begin(), ar.end());
    out_rows_.insert(out_rows_.end(), lone_rows.begin(), lone_rows.end());
    out_cols_.insert(out_cols_.end(), ac.begin(), ac.end());
    out_cols_.insert(out_cols_.end(), lone_cols.begin(), lone_cols.end());
  }

  const SparseRatings& r_;
  const ReorderOptions& o_;
  std::vector<std::uint32_t> col_local_;
  std::vector<std::uint32_t> out_rows_;
  std::vector<std::uint32_t> out_cols_;
};

std::vector<std::uint32_t> degree_order(std::uint32_t n, auto degree) {
  std::vector<std::uint32_t> order(n);
  std::iota(order.begin(), order.end(), 0u);
  std::stable_sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) { return degree(a) > degree(b); });
  return order;
}

}  // namespace

Reordering reorder_for_locality(const SparseRatings& r, const ReorderOptions& options) {
  Reordering best;
  best.rows = Permutation::identity(r.num_users());
  best.cols = Permutation::identity(r.num_movies());
  best.method = "identity";
  best.identity_score = locality_score(r);
  best.score = best.identity_score;

  auto consider = [&](Permutation rows, Permutation cols, const char* method) {
    const double s = locality_score(r.permuted(rows, cols));
    if (s < best.score) {
      best.rows = std::move(rows);
      best.cols = std::move(cols);
      best.method = method;
      best.score = s;
    }
  };

  {
    Bisector b(r, options);
    std::vector<std::uint32_t> rows(r.num_users()), cols(r.num_movies());
    std::iota(rows.begin(), rows.end(), 0u);
    std::iota(cols.begin(), cols.end(), 0u);
    b.run(std::move(rows), std::move(cols), 0);
    consider(Permutation::from_order(b.take_rows()), Permutation::from_order(b.take_cols()), "bisection");
  }
  consider(Permutation::from_order(degree_order(r.num_users(), [&](std::uint32_t u) { return r.user_degree(u); })),
           Permutation::from_order(degree_order(r.num_movies(), [&](std::uint32_t m) { return r.movie_degree(m); })),
           "degree");
  return best;
}

// --- contiguous partitioning ---------------------------------------------------

std::vector<Range> partition_items(std::span<const double> costs, std::size_t num_nodes) {
  const std::size_t n = costs.size();
  if (num_nodes == 0) fail(ErrorKind::kInvalidArgument, "need at least one node");
  if (num_nodes > n) {
    fail(ErrorKind::kMoreNodesThanItems, fmt::format("{} nodes for {} items", num_nodes, n));
  }
  std::vector<double> prefix(n + 1, 0.0);
  for (std::size_t i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + costs[i];
  auto seg = [&](std::size_t s, std::size_t e) { return prefix[e] - prefix[s]; };

  // best[j][i]: minimal bottleneck placing the first i items into j+1 ranges.
  // cut[j][i]: number of items in the first j ranges at that optimum.
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<std::vector<double>> best(num_nodes, std::vector<double>(n + 1, inf));
  std::vector<std::vector<std::uint32_t>> cut(num_nodes, std::vector<std::uint32_t>(n + 1, 0));
  for (std::size_t i = 1; i <= n; ++i) best[0][i] = seg(0, i);
  for (std::size_t j = 1; j < num_nodes; ++j) {
    // Previous bottleneck grows with s while the last range shrinks with s,
    // so the crossing point only moves right as i grows.
    std::size_t t = j;
    for (std::size_t i = j + 1; i <= n; ++i) {
      while (t < i - 1 && best[j - 1][t] < seg(t, i)) ++t;
      double bv = std::max(best[j - 1][t], seg(t, i));
      std::size_t bs = t;
      if (t > j) {
        const double alt = std::max(best[j - 1][t - 1], seg(t - 1, i));
        if (alt <= bv) {
          bv = alt;
          bs = t - 1;
        }
      }
      best[j][i] = bv;
      cut[j][i] = static_cast<std::uint32_t>(bs);
    }
  }

  std::vector<Range> ranges(num_nodes);
  std::size_t end = n;
  for (std::size_t j = num_nodes; j-- > 0;) {
    const std::size_t begin = j == 0 ? 0 : cut[j][end];
    ranges[j] = {static_cast<std::uint32_t>(begin), static_cast<std::uint32_t>(end)};
    end = begin;
  }
  return ranges;
}

NodeId owner_of(std::span<const Range> ranges, std::uint32_t item) {
  const auto it = std::upper_bound(ranges.begin(), ranges.end(), item,
                                   [](std::uint32_t v, const Range& r) { return v < r.end; });
  if (it == ranges.end() || !it->contains(item)) {
    fail(ErrorKind::kInvalidArgument, fmt::format("item {} is not covered by the partition", item));
  }
  return static_cast<NodeId>(it - ranges.begin());
}

// --- comm plan -----------------------------------------------------------------

CommPlan build_comm_plan(const SparseRatings& pattern, std::span<const Range> ranges_u,
                         std::span<const Range> ranges_v) {
  CommPlan plan;
  plan.user_destinations.resize(pattern.num_users());
  plan.movie_destinations.resize(pattern.num_movies());
  auto fill = [](std::span<const Entry> list, std::span<const Range> other_ranges, NodeId self,
                 std::vector<NodeId>& dest) {
    for (const Entry& e : list) {
      const NodeId n = owner_of(other_ranges, e.index);
      if (n != self) dest.push_back(n);
    }
    std::sort(dest.begin(), dest.end());
    dest.erase(std::unique(dest.begin(), dest.end()), dest.end());
  };
  for (std::uint32_t u = 0; u < pattern.num_users(); ++u) {
    fill(pattern.user_ratings(u), ranges_v, owner_of(ranges_u, u), plan.user_destinations[u]);
    plan.user_volume += plan.user_destinations[u].size();
  }
  for (std::uint32_t m = 0; m < pattern.num_movies(); ++m) {
    fill(pattern.movie_ratings(m), ranges_u, owner_of(ranges_v, m), plan.movie_destinations[m]);
    plan.movie_volume += plan.movie_destinations[m].size();
  }
  return plan;
}

namespace {

std::vector<std::uint32_t> expected_from(const std::vector<std::vector<NodeId>>& dest, NodeId node) {
  std::vector<std::uint32_t> out;
  for (std::uint32_t i = 0; i < dest.size(); ++i)
    if (std::binary_search(dest[i].begin(), dest[i].end(), node)) out.push_back(i);
  return out;
}

std::vector<double> range_costs(std::span<const Range> ranges, std::span<const double> costs) {
  std::vector<double> out;
  for (const Range& r : ranges) {
    double s = 0.0;
    for (std::uint32_t i = r.begin; i < r.end; ++i) s += costs[i];
    out.push_back(s);
  }
  return out;
}

void check_ranges(std::span<const Range> ranges, std::uint32_t n, const char* side) {
  std::uint32_t expect = 0;
  for (const Range& r : ranges) {
    if (r.begin != expect || r.end < r.begin) fail(ErrorKind::kInvalidArgument, fmt::format("{} ranges are not contiguous", side));
    expect = r.end;
  }
  if (expect != n) fail(ErrorKind::kInvalidArgument, fmt::format("{} ranges do not cover all items", side));
}

}  // namespace

std::vector<std::uint32_t> PartitionPlan::expected_users(NodeId node) const {
  return expected_from(comm.user_destinations, node);
}

std::vector<std::uint32_t> PartitionPlan::expected_movies(NodeId node) const {
  return expected_from(comm.movie_destinations, node);
}

PartitionPlan assemble_plan(const SparseRatings& train, const SparseRatings& pattern, Permutation rows,
                            Permutation cols, std::vector<Range> ranges_u, std::vector<Range> ranges_v,
                            const CostModel& cost) {
  if (ranges_u.size() != ranges_v.size() || ranges_u.empty()) {
    fail(ErrorKind::kInvalidArgument, "user and movie ranges must cover the same node set");
  }
  check_ranges(ranges_u, train.num_users(), "user");
  check_ranges(ranges_v, train.num_movies(), "movie");
  PartitionPlan plan;
  plan.num_nodes = ranges_u.size();
  const SparseRatings ptrain = train.permuted(rows, cols);
  const SparseRatings ppattern = pattern.permuted(rows, cols);
  std::vector<double> cu(ptrain.num_users()), cv(ptrain.num_movies());
  for (std::uint32_t u = 0; u < ptrain.num_users(); ++u) cu[u] = estimate_cost(ptrain.user_degree(u), cost);
  for (std::uint32_t m = 0; m < ptrain.num_movies(); ++m) cv[m] = estimate_cost(ptrain.movie_degree(m), cost);
  plan.comm = build_comm_plan(ppattern, ranges_u, ranges_v);
  plan.predicted_node_cost_u = range_costs(ranges_u, cu);
  plan.predicted_node_cost_v = range_costs(ranges_v, cv);
  plan.row_perm = std::move(rows);
  plan.col_perm = std::move(cols);
  plan.node_ranges_u = std::move(ranges_u);
  plan.node_ranges_v = std::move(ranges_v);
  return plan;
}

PartitionPlan make_plan(const SparseRatings& train, const SparseRatings& pattern, const PlanOptions& options) {
  options.cost.validate();
  Permutation rows = Permutation::identity(train.num_users());
  Permutation cols = Permutation::identity(train.num_movies());
  if (options.reorder) {
    Reordering re = reorder_for_locality(train, options.reorder_options);
    rows = std::move(re.rows);
    cols = std::move(re.cols);
  }
  const SparseRatings ptrain = train.permuted(rows, cols);
  std::vector<double> cu(ptrain.num_users()), cv(ptrain.num_movies());
  for (std::uint32_t u = 0; u < ptrain.num_users(); ++u) cu[u] = estimate_cost(ptrain.user_degree(u), options.cost);
  for (std::uint32_t m = 0; m < ptrain.num_movies(); ++m) cv[m] = estimate_cost(ptrain.movie_degree(m), options.cost);
  auto ranges_u = partition_items(cu, options.num_nodes);
  auto ranges_v = partition_items(cv, options.num_nodes);
  return assemble_plan(train, pattern, std::move(rows), std::move(cols), std::move(ranges_u), std::move(ranges_v),
                       options.cost);
}

// --- export / import -------------------------------------------------------------

std::string plan_to_json(const PartitionPlan& plan) {
  nlohmann::json j;
  j["format"] = "bpmf-plan";
  j["version"] = 1;
  j["num_nodes"] = plan.num_nodes;
  j["row_perm"] = plan.row_perm.order();
  j["col_perm"] = plan.col_perm.order();
  auto ranges = [](const std::vector<Range>& rs) {
    nlohmann::json a = nlohmann::json::array();
    for (const Range& r : rs) a.push_back({r.begin, r.end});
    return a;
  };
  j["node_ranges_u"] = ranges(plan.node_ranges_u);
  j["node_ranges_v"] = ranges(plan.node_ranges_v);
  j["user_volume"] = plan.comm.user_volume;
  j["movie_volume"] = plan.comm.movie_volume;
  j["predicted_node_cost_u"] = plan.predicted_node_cost_u;
  j["predicted_node_cost_v"] = plan.predicted_node_cost_v;
  return j.dump(1);
}

void write_plan(const PartitionPlan& plan, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::kIoError, "cannot write " + path.string());
  out << plan_to_json(plan) << '\n';
  if (!out) fail(ErrorKind::kIoError, "write failed for " + path.string());
}

PartitionPlan read_plan(const std::filesystem::path& path, const SparseRatings& train, const SparseRatings& pattern,
                        const CostModel& cost) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kIoError, "cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
    if (j.at("format") != "bpmf-plan" || j.at("version") != 1) fail(ErrorKind::kSchemaMismatch, "not a version-1 plan file");
    auto ranges = [](const nlohmann::json& a) {
      std::vector<Range> out;
      for (const auto& r : a) out.push_back({r.at(0).get<std::uint32_t>(), r.at(1).get<std::uint32_t>()});
      return out;
    };
    auto rows = Permutation::from_order(j.at("row_perm").get<std::vector<std::uint32_t>>());
    auto cols = Permutation::from_order(j.at("col_perm").get<std::vector<std::uint32_t>>());
    if (rows.size() != train.num_users() || cols.size() != train.num_movies()) {
      fail(ErrorKind::kSchemaMismatch, "plan shape does not match the data");
    }
    return assemble_plan(train, pattern, std::move(rows), std::move(cols), ranges(j.at("node_ranges_u")),
                         ranges(j.at("node_ranges_v")), cost);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kSchemaMismatch, std::string("bad plan file: ") + e.what());
  }
}

}  // namespace bpmf
