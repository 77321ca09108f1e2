// Copyright 2026 The bpmf-dist Authors
// SPDX-License-Identifier: Apache-2.0

#include "bpmf/scheduler.hpp"

#include <algorithm>
#include <limits>
#include <optional>
#include <chrono>
#include <cmath>
#include <numeric>
#include <queue>

#include <fmt/core.h>

#include "bpmf/error.hpp"
#include "bpmf/ratings.hpp"
#include "bpmf/sampler.hpp"

namespace bpmf {

std::string_view to_string(UpdateMethod method) {
  switch (method) {
    case UpdateMethod::kRankOne: return "rank-one";
    case UpdateMethod::kSeqCholesky: return "seq-cholesky";
    case UpdateMethod::kParCholesky: return "par-cholesky";
  }
  return "unknown";
}

void CostModel::validate() const {
  if (!(fixed_cost >= 0.0)) fail(ErrorKind::kInvalidArgument, "fixed cost must be non-negative");
  if (!(per_rating_cost > 0.0)) fail(ErrorKind::kInvalidArgument, "per-rating cost must be positive");
  if (rank1_threshold > parallel_threshold) {
    fail(ErrorKind::kInvalidArgument, "rank1_threshold must not exceed parallel_threshold");
  }
}

double estimate_cost(std::size_t nnz_item, const CostModel& model) {
  return model.fixed_cost + model.per_rating_cost * static_cast<double>(nnz_item);
}

UpdateMethod select_method(std::size_t nnz_item, const CostModel& model) {
  if (nnz_item < model.rank1_threshold) return UpdateMethod::kRankOne;
  if (nnz_item >= model.parallel_threshold) return UpdateMethod::kParCholesky;
  return UpdateMethod::kSeqCholesky;
}

std::vector<std::vector<std::uint32_t>> build_task_groups(std::span<const double> item_costs,
                                                          std::size_t num_workers) {
  if (num_workers == 0) fail(ErrorKind::kInvalidArgument, "need at least one worker");
  std::vector<std::uint32_t> order(item_costs.size());
  std::iota(order.begin(), order.end(), 0u);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::uint32_t a, std::uint32_t b) { return item_costs[a] > item_costs[b]; });

  using Load = std::pair<double, std::size_t>;  // (load, group), min-heap on both
  std::priority_queue<Load, std::vector<Load>, std::greater<>> heap;
  for (std::size_t g = 0; g < num_workers; ++g) heap.push({0.0, g});

  std::vector<std::vector<std::uint32_t>> groups(num_workers);
  for (std::uint32_t item : order) {
    auto [load, g] = heap.top();
    heap.pop();
    groups[g].push_back(item);
    heap.push({load + item_costs[item], g});
  }
  for (auto& g : groups) std::sort(g.begin(), g.end());
  return groups;
}

// --- calibration -------------------------------------------------------------

std::string CalibrationReport::to_text() const {
  std::string out;
  out += fmt::format("fixed_cost_us={:.6g}\n", model.fixed_cost);
  out += fmt::format("per_rating_cost_us={:.6g}\n", model.per_rating_cost);
  out += fmt::format("rank1_threshold={}\n", model.rank1_threshold);
  out += fmt::format("parallel_threshold={}\n", model.parallel_threshold);
  out += fmt::format("fallback={}\n", fallback ? "true" : "false");
  if (!reason.empty()) out += fmt::format("reason={}\n", reason);
  for (int m = 0; m < 3; ++m) {
    const auto name = to_string(static_cast<UpdateMethod>(m));
    out += fmt::format("users.{}={}\n", name, users_per_method[m]);
    out += fmt::format("movies.{}={}\n", name, movies_per_method[m]);
  }
  for (const auto& s : samples) {
    out += fmt::format("sample.{}.nnz{}=mean_us:{:.6g},cv:{:.4f}\n", to_string(s.method), s.nnz, s.mean_us, s.cv);
  }
  return out;
}

namespace {

const TimingSample* find_sample(std::span<const TimingSample> samples, UpdateMethod m, std::size_t nnz) {
  for (const auto& s : samples)
    if (s.method == m && s.nnz == nnz) return &s;
  return nullptr;
}

// First nnz, interpolated between grid points, where diff(nnz) changes from
// negative to non-negative. Returns nullopt if it never does.
template <typename Diff>
std::optional<double> crossing(const std::vector<std::size_t>& grid, Diff diff) {
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double d = diff(grid[i]);
    if (d >= 0.0) {
      if (i == 0) return static_cast<double>(grid[0]);
      const double dp = diff(grid[i - 1]);
      const double a = static_cast<double>(grid[i - 1]);
      const double b = static_cast<double>(grid[i]);
      return a + (b - a) * (-dp) / (d - dp);
    }
  }
  return std::nullopt;
}

// Interpolated crossings carry rounding noise; an exact integer crossing must
// not be pushed up to the next count.
std::size_t ceil_count(double x) { return static_cast<std::size_t>(std::ceil(x * (1.0 - 1e-12))); }

}  // namespace

CalibrationReport fit_cost_model(std::span<const TimingSample> samples, const CalibrationOptions& options) {
  CalibrationReport report;
  report.samples.assign(samples.begin(), samples.end());
  auto fallback = [&](std::string why) {
    report.model = CostModel{};
    report.fallback = true;
    report.reason = std::move(why);
    return report;
  };

  for (const auto& s : samples) {
    if (!(s.cv <= options.max_cv)) {
      return fallback(fmt::format("timing variance too high ({} nnz={} cv={:.2f})", to_string(s.method), s.nnz, s.cv));
    }
  }

  std::vector<std::size_t> grid = options.grid;
  std::sort(grid.begin(), grid.end());
  // Envelope: fastest method at each grid point.
  std::vector<double> xs, ys;
  for (std::size_t n : grid) {
    double best = std::numeric_limits<double>::infinity();
    for (int m = 0; m < 3; ++m)
      if (const auto* s = find_sample(samples, static_cast<UpdateMethod>(m), n)) best = std::min(best, s->mean_us);
    if (std::isfinite(best) && best > 0.0) {
      xs.push_back(static_cast<double>(n));
      ys.push_back(best);
    }
  }
  if (xs.size() < 2) return fallback("fewer than two usable timing points");

  // Minimize sum ((c0 + c1 x - y) / y)^2.
  double s00 = 0, s01 = 0, s11 = 0, t0 = 0, t1 = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double w = 1.0 / (ys[i] * ys[i]);
    s00 += w;
    s01 += w * xs[i];
    s11 += w * xs[i] * xs[i];
    t0 += w * ys[i];
    t1 += w * xs[i] * ys[i];
  }
  const double det = s00 * s11 - s01 * s01;
  if (!(std::abs(det) > 0.0)) return fallback("singular least-squares system");
  const double c0 = (t0 * s11 - t1 * s01) / det;
  const double c1 = (s00 * t1 - s01 * t0) / det;
  if (!(c1 > 0.0)) return fallback("fitted per-rating cost is not positive");

  CostModel model;
  model.fixed_cost = std::max(0.0, c0);
  model.per_rating_cost = c1;

  auto time_of = [&](UpdateMethod m, std::size_t n) {
    const auto* s = find_sample(samples, m, n);
    return s ? s->mean_us : std::numeric_limits<double>::quiet_NaN();
  };
  const bool have_r1 = std::all_of(grid.begin(), grid.end(), [&](std::size_t n) {
    return find_sample(samples, UpdateMethod::kRankOne, n) && find_sample(samples, UpdateMethod::kSeqCholesky, n);
  });
  if (have_r1) {
    const auto r1 = crossing(grid, [&](std::size_t n) {
      return time_of(UpdateMethod::kRankOne, n) - time_of(UpdateMethod::kSeqCholesky, n);
    });
    model.rank1_threshold = r1 ? ceil_count(*r1) : grid.back() + 1;
  }
  const bool have_par = std::all_of(grid.begin(), grid.end(), [&](std::size_t n) {
    return find_sample(samples, UpdateMethod::kParCholesky, n) && find_sample(samples, UpdateMethod::kSeqCholesky, n);
  });
  std::optional<double> par;
  if (have_par) {
    par = crossing(grid, [&](std::size_t n) {
      if (n < model.rank1_threshold) return -1.0;
      return time_of(UpdateMethod::kSeqCholesky, n) - time_of(UpdateMethod::kParCholesky, n);
    });
  }
  model.parallel_threshold = par ? ceil_count(*par) : 10 * model.rank1_threshold;
  model.parallel_threshold = std::max(model.parallel_threshold, model.rank1_threshold);
  report.model = model;
  return report;
}

CalibrationReport calibrate_with_timer(const UpdateTimer& timer, const CalibrationOptions& options) {
  std::vector<TimingSample> samples;
  for (int m = 0; m < 3; ++m) {
    const auto method = static_cast<UpdateMethod>(m);
    for (std::size_t n : options.grid) {
      const std::vector<double> t = timer(method, n);
      if (t.empty()) continue;
      double mean = 0.0;
      for (double v : t) mean += v;
      mean /= static_cast<double>(t.size());
      double var = 0.0;
      for (double v : t) var += (v - mean) * (v - mean);
      var = t.size() > 1 ? var / static_cast<double>(t.size() - 1) : 0.0;
      samples.push_back({method, n, mean * 1e6, mean > 0.0 ? std::sqrt(var) / mean : 0.0});
    }
  }
  return fit_cost_model(samples, options);
}

CalibrationReport calibrate(const SparseRatings& ratings, std::size_t k, const CalibrationOptions& options) {
  if (k == 0) fail(ErrorKind::kInvalidArgument, "latent dimension must be positive");
  const std::size_t max_n = options.grid.empty() ? 0 : *std::max_element(options.grid.begin(), options.grid.end());

  const auto rows = static_cast<std::uint32_t>(std::max<std::size_t>(max_n, 1));
  LatentMatrix others(Side::kUser, rows, k);
  for (std::uint32_t i = 0; i < rows; ++i) {
    CounterRng rng(options.seed, {0, Purpose::kCalibration, i});
    for (double& v : others.row(i)) v = rng.normal();
  }
  std::vector<Entry> entries(rows);
  for (std::uint32_t i = 0; i < rows; ++i) entries[i] = {i, 1.0};
  const HyperParams hyper = HyperParams::from(Vector(k, 0.0), SquareMatrix::identity(k));

  UpdateTimer timer = [&](UpdateMethod method, std::size_t nnz) {
    std::vector<double> out;
    Vector result(k);
    const std::span<const Entry> ratings_for_item(entries.data(), nnz);
    for (std::size_t r = 0; r <= options.repeats; ++r) {
      CounterRng rng(options.seed, {static_cast<std::uint32_t>(r), Purpose::kCalibration, 0});
      const auto start = std::chrono::steady_clock::now();
      update_item(ratings_for_item, others, hyper, 2.0, 0.0, rng, method, result);
      const auto stop = std::chrono::steady_clock::now();
      if (r > 0) out.push_back(std::chrono::duration<double>(stop - start).count());  // first run warms caches
    }
    return out;
  };
  CalibrationReport report = calibrate_with_timer(timer, options);

  for (std::uint32_t u = 0; u < ratings.num_users(); ++u)
    ++report.users_per_method[static_cast<int>(select_method(ratings.user_degree(u), report.model))];
  for (std::uint32_t m = 0; m < ratings.num_movies(); ++m)
    ++report.movies_per_method[static_cast<int>(select_method(ratings.movie_degree(m), report.model))];
  return report;
}

}  // namespace bpmf
