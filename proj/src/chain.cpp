// Copyright 2026 The bpmf-dist Authors
// SPDX-License-Identifier: Apache-2.0

#include "bpmf/chain.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <limits>

#include <fmt/core.h>
#include <tbb/blocked_range.h>
#include <tbb/parallel_for.h>
#include <tbb/partitioner.h>
#include <tbb/task_arena.h>

#include "bpmf/error.hpp"
#include "bpmf/exact_sum.hpp"
#include "bpmf/rng.hpp"

namespace bpmf {

void SamplerConfig::validate() const {
  if (k < 1 || k > kMaxLatentDim) fail(ErrorKind::kInvalidArgument, fmt::format("k must be in [1, {}]", kMaxLatentDim));
  if (!(alpha > 0.0) || !std::isfinite(alpha)) fail(ErrorKind::kInvalidArgument, "alpha must be positive and finite");
  // Zero iterations is a dry run: load, plan and write headers only.
  if (iterations > 0 ? burnin >= iterations : burnin != 0) {
    fail(ErrorKind::kInvalidArgument, "burnin must be smaller than iterations");
  }
  if (!(beta0 > 0.0) || !std::isfinite(beta0)) fail(ErrorKind::kInvalidArgument, "beta0 must be positive");
  if (nu0 != 0.0 && !(nu0 > double(k) - 1.0)) fail(ErrorKind::kInvalidArgument, "nu0 must exceed k - 1");
}

NwPrior SamplerConfig::prior() const {
  NwPrior p = NwPrior::defaults(k);
  p.beta0 = beta0;
  if (nu0 != 0.0) p.nu0 = nu0;
  return p;
}

std::uint64_t SamplerConfig::digest() const {
  std::uint64_t h = mix64(0x434f4e464947ull ^ k);
  for (double d : {alpha, beta0, nu0}) h = mix64(h ^ std::bit_cast<std::uint64_t>(d));
  h = mix64(h ^ burnin);
  h = mix64(h ^ (std::uint64_t(center) << 1 | std::uint64_t(clamp)));
  return h;
}

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) { return std::chrono::duration<double, std::milli>(Clock::now() - t0).count(); }

constexpr std::uint32_t kFinalTag = 0x80000000u;

struct SideWork {
  Side side;
  Channel items;
  Channel aggregate;
  Channel gather;
  Range owned;
  std::vector<std::vector<std::uint32_t>> groups;  // global item indices
  std::vector<std::uint32_t> expected;
  const std::vector<std::vector<NodeId>>* destinations = nullptr;
  const Permutation* perm = nullptr;
};

// Packs a list of exact sums as [n, partials..., n, partials...].
void pack_sum(std::vector<double>& out, const ExactSum& s) {
  const auto p = s.partials();
  out.push_back(static_cast<double>(p.size()));
  out.insert(out.end(), p.begin(), p.end());
}

ExactSum unpack_sum(std::span<const double> in, std::size_t& pos) {
  if (pos >= in.size()) fail(ErrorKind::kParseError, "truncated evaluation partials");
  const auto n = static_cast<std::size_t>(in[pos++]);
  if (pos + n > in.size()) fail(ErrorKind::kParseError, "truncated evaluation partials");
  auto s = ExactSum::from_partials(in.subspan(pos, n));
  pos += n;
  return s;
}

class NodeChain {
 public:
  NodeChain(const SamplerConfig& config, const ChainInputs& inputs, Transport& tx, const ChainOptions& options,
            const ChainHooks& hooks)
      : cfg_(config),
        in_(inputs),
        train_(*inputs.train),
        plan_(*inputs.plan),
        tx_(tx),
        opt_(options),
        hooks_(hooks),
        self_(tx.self()),
        k_(config.k),
        prior_(config.prior()),
        arena_(static_cast<int>(std::max<std::size_t>(1, options.workers))),
        u_(Side::kUser, train_.num_users(), k_),
        v_(Side::kMovie, train_.num_movies(), k_) {
    offset_ = cfg_.center ? train_.global_mean() : 0.0;
    for (std::size_t p = 0; p < in_.test.size(); ++p) {
      if (plan_.user_owner(in_.test[p].user) == self_) owned_tests_.push_back(static_cast<std::uint32_t>(p));
    }
    avg_.assign(in_.test.size(), 0.0);
    movies_ = make_side(Side::kMovie);
    users_ = make_side(Side::kUser);
    u_.recompute_aggregates();
    v_.recompute_aggregates();
  }

  void resume(const CheckpointState& s) {
    if (s.k != k_ || s.num_users != train_.num_users() || s.num_movies != train_.num_movies() ||
        s.avg_predictions.size() != in_.test.size()) {
      fail(ErrorKind::kCheckpointMismatch, "checkpoint dimensions do not match the data and k");
    }
    if (s.seed != cfg_.seed) fail(ErrorKind::kCheckpointMismatch, "checkpoint seed differs");
    if (s.data_digest != in_.data_digest) fail(ErrorKind::kCheckpointMismatch, "checkpoint was taken on other data");
    if (s.config_digest != cfg_.digest()) fail(ErrorKind::kCheckpointMismatch, "checkpoint sampler settings differ");
    for (std::uint32_t i = 0; i < u_.rows(); ++i) {
      const auto src = std::span(s.u).subspan(std::size_t(plan_.row_perm.to_old(i)) * k_, k_);
      std::copy(src.begin(), src.end(), u_.row(i).begin());
    }
    for (std::uint32_t i = 0; i < v_.rows(); ++i) {
      const auto src = std::span(s.v).subspan(std::size_t(plan_.col_perm.to_old(i)) * k_, k_);
      std::copy(src.begin(), src.end(), v_.row(i).begin());
    }
    u_.recompute_aggregates();
    v_.recompute_aggregates();
    avg_ = s.avg_predictions;
    start_ = s.iteration;
    hyper_u_ = HyperParams::from(s.mu_u, s.lambda_u);
    hyper_v_ = HyperParams::from(s.mu_v, s.lambda_v);
    have_hyper_ = true;
  }

  PosteriorResult run() {
    PosteriorResult result;
    result.iterations_done = start_;
    bool stop = false;
    OverlapStats before = tx_.collect_stats();
    for (std::uint32_t t = start_; t < cfg_.iterations && !stop; ++t) {
      IterationRecord rec;
      rec.iteration = t + 1;
      rec.phase_v_ms = run_phase(movies_, v_, u_, t, hyper_v_);
      rec.phase_u_ms = run_phase(users_, u_, v_, t, hyper_u_);
      have_hyper_ = true;
      stop = evaluate(t, rec);
      rec.stats = tx_.collect_stats();
      rec.delta = rec.stats.since(before);
      before = rec.stats;
      rec.wall_ms = rec.delta.elapsed * 1000.0;
      rec.updates_per_sec = rec.wall_ms > 0.0
                                ? double(train_.num_users() + train_.num_movies()) / (rec.wall_ms / 1000.0)
                                : 0.0;
      result.trace.push_back(rec);
      result.iterations_done = t + 1;
      if (hooks_.on_iteration) hooks_.on_iteration(rec);

      const bool periodic = hooks_.checkpoint_every > 0 && (t + 1) % hooks_.checkpoint_every == 0;
      const bool last = stop || t + 1 == cfg_.iterations;
      if (periodic && !last) {
        auto state = gather_state(t, t + 1);
        if (state && hooks_.on_checkpoint) hooks_.on_checkpoint(*state);
      }
    }
    result.stopped = stop && result.iterations_done < cfg_.iterations;
    if (!have_hyper_) {
      // Resumed at the end: nothing ran, report the checkpoint as is.
      hyper_u_ = HyperParams::from(Vector(k_, 0.0), SquareMatrix::identity(k_));
      hyper_v_ = hyper_u_;
    }
    if (auto state = gather_state(kFinalTag | result.iterations_done, result.iterations_done)) {
      result.state = std::move(*state);
      result.has_state = true;
    }
    tx_.flush();
    result.stats = tx_.collect_stats();
    result.write_counts = tx_.write_counts();
    return result;
  }

 private:
  SideWork make_side(Side side) {
    SideWork w;
    w.side = side;
    const bool movie = side == Side::kMovie;
    w.items = movie ? Channel::kMovieItems : Channel::kUserItems;
    w.aggregate = movie ? Channel::kMovieAggregate : Channel::kUserAggregate;
    w.gather = movie ? Channel::kGatherMovies : Channel::kGatherUsers;
    w.owned = movie ? plan_.node_ranges_v.at(self_) : plan_.node_ranges_u.at(self_);
    w.expected = movie ? plan_.expected_movies(self_) : plan_.expected_users(self_);
    w.destinations = movie ? &plan_.comm.movie_destinations : &plan_.comm.user_destinations;
    w.perm = movie ? &plan_.col_perm : &plan_.row_perm;
    std::vector<double> costs;
    costs.reserve(w.owned.size());
    for (std::uint32_t i = w.owned.begin; i < w.owned.end; ++i) {
      const auto nnz = movie ? train_.movie_degree(i) : train_.user_degree(i);
      costs.push_back(estimate_cost(nnz, opt_.cost));
    }
    w.groups = build_task_groups(costs, std::max<std::size_t>(1, opt_.workers));
    for (auto& g : w.groups)
      for (auto& i : g) i += w.owned.begin;
    return w;
  }

  std::span<const Entry> ratings_of(Side side, std::uint32_t i) const {
    return side == Side::kMovie ? train_.movie_ratings(i) : train_.user_ratings(i);
  }

  double run_phase(SideWork& w, LatentMatrix& mine, const LatentMatrix& others, std::uint32_t t,
                   HyperParams& hyper) {
    const auto t0 = Clock::now();
    CounterRng hyper_rng(cfg_.seed, {t, hyper_purpose(w.side), 0});
    hyper = sample_hyper(mine, prior_, hyper_rng);

    std::vector<AggregateSums> partial(w.groups.size(), AggregateSums(k_));
    tx_.begin_compute();
    try {
      arena_.execute([&] {
        tbb::parallel_for(
            tbb::blocked_range<std::size_t>(0, w.groups.size(), 1),
            [&](const tbb::blocked_range<std::size_t>& range) {
              for (std::size_t g = range.begin(); g != range.end(); ++g) {
                for (std::uint32_t i : w.groups[g]) {
                  const auto ratings = ratings_of(w.side, i);
                  CounterRng rng(cfg_.seed, {t, update_purpose(w.side), w.perm->to_old(i)});
                  const auto method = select_method(ratings.size(), opt_.cost);
                  const auto row = mine.row(i);
                  update_item(ratings, others, hyper, cfg_.alpha, offset_, rng, method, row);
                  partial[g].add_row(row);
                  for (NodeId dest : (*w.destinations)[i]) tx_.send_item(dest, w.items, t, i, row);
                }
              }
            },
            tbb::simple_partitioner());
      });
    } catch (...) {
      tx_.end_compute();
      throw;
    }
    tx_.end_compute();

    for (auto& item : tx_.end_phase(w.items, t, w.expected)) {
      if (item.index >= mine.rows() || item.payload.size() != k_) {
        fail(ErrorKind::kTransportFailure, fmt::format("malformed {} item {} from node {}", to_string(w.items),
                                                       item.index, item.source));
      }
      std::copy(item.payload.begin(), item.payload.end(), mine.row(item.index).begin());
    }

    AggregateSums local(k_);
    for (const auto& p : partial) local.merge(p);
    AggregateSums global(k_);
    for (const auto& packed : tx_.all_gather(w.aggregate, t, local.pack())) global.merge(AggregateSums::unpack(packed, k_));
    auto [sum, scatter] = global.values();
    mine.set_aggregates(std::move(sum), std::move(scatter));
    return ms_since(t0);
  }

  // Updates the running averages of owned test points and fills the RMSEs.
  // Returns whether any node asked to stop.
  bool evaluate(std::uint32_t t, IterationRecord& rec) {
    ExactSum se_sample, se_avg;
    const double lo = train_.min_rating(), hi = train_.max_rating();
    for (std::uint32_t p : owned_tests_) {
      const Rating& r = in_.test[p];
      double pred = predict(u_.row(r.user), v_.row(r.movie), offset_);
      if (cfg_.clamp) pred = std::clamp(pred, lo, hi);
      if (t <= cfg_.burnin) {
        avg_[p] = pred;  // average of the single post-burn-in sample or the current one
      } else {
        const double count = double(t - cfg_.burnin + 1);
        avg_[p] += (pred - avg_[p]) / count;
      }
      const double ds = pred - r.value, da = avg_[p] - r.value;
      se_sample.add(ds * ds);
      se_avg.add(da * da);
    }
    const bool want_stop = hooks_.stop_requested && hooks_.stop_requested();
    std::vector<double> payload{want_stop ? 1.0 : 0.0};
    pack_sum(payload, se_sample);
    pack_sum(payload, se_avg);
    ExactSum total_sample, total_avg;
    bool stop = false;
    for (const auto& part : tx_.all_gather(Channel::kEvaluation, t, payload)) {
      if (part.empty()) fail(ErrorKind::kTransportFailure, "empty evaluation partials");
      stop = stop || part[0] != 0.0;
      std::size_t pos = 1;
      total_sample.merge(unpack_sum(part, pos));
      total_avg.merge(unpack_sum(part, pos));
    }
    const double n = double(in_.test.size());
    rec.rmse_sample = n > 0 ? std::sqrt(total_sample.value() / n) : std::numeric_limits<double>::quiet_NaN();
    rec.rmse_avg = n > 0 ? std::sqrt(total_avg.value() / n) : std::numeric_limits<double>::quiet_NaN();
    return stop;
  }

  std::optional<CheckpointState> gather_state(std::uint32_t tag, std::uint32_t done) {
    auto rows_of = [&](const SideWork& w, const LatentMatrix& m) {
      std::vector<Transport::Received> items;
      items.reserve(w.owned.size());
      for (std::uint32_t i = w.owned.begin; i < w.owned.end; ++i) {
        const auto r = m.row(i);
        items.push_back({self_, i, {r.begin(), r.end()}});
      }
      return items;
    };
    auto users = tx_.gather(Channel::kGatherUsers, tag, rows_of(users_, u_));
    auto movies = tx_.gather(Channel::kGatherMovies, tag, rows_of(movies_, v_));
    std::vector<Transport::Received> preds;
    preds.reserve(owned_tests_.size());
    for (std::uint32_t p : owned_tests_) preds.push_back({self_, p, {avg_[p]}});
    auto gathered_preds = tx_.gather(Channel::kGatherPredictions, tag, std::move(preds));
    if (self_ != 0) return std::nullopt;

    CheckpointState s;
    s.k = k_;
    s.num_users = train_.num_users();
    s.num_movies = train_.num_movies();
    s.iteration = done;
    s.samples = done > cfg_.burnin ? done - cfg_.burnin : 0;
    s.seed = cfg_.seed;
    s.data_digest = in_.data_digest;
    s.config_digest = cfg_.digest();
    s.u.assign(std::size_t(s.num_users) * k_, 0.0);
    s.v.assign(std::size_t(s.num_movies) * k_, 0.0);
    auto place = [&](const std::vector<Transport::Received>& items, const Permutation& perm, std::vector<double>& out,
                     std::uint32_t rows) {
      if (items.size() != rows) fail(ErrorKind::kTransportFailure, "gathered row count does not match");
      for (const auto& it : items) {
        if (it.index >= rows || it.payload.size() != k_) fail(ErrorKind::kTransportFailure, "malformed gathered row");
        std::copy(it.payload.begin(), it.payload.end(), out.begin() + std::size_t(perm.to_old(it.index)) * k_);
      }
    };
    place(users, plan_.row_perm, s.u, s.num_users);
    place(movies, plan_.col_perm, s.v, s.num_movies);
    if (gathered_preds.size() != in_.test.size()) fail(ErrorKind::kTransportFailure, "gathered prediction count differs");
    s.avg_predictions.assign(in_.test.size(), 0.0);
    for (const auto& it : gathered_preds) {
      if (it.index >= in_.test.size() || it.payload.size() != 1) fail(ErrorKind::kTransportFailure, "malformed prediction");
      s.avg_predictions[it.index] = it.payload[0];
    }
    s.mu_u = hyper_u_.mu;
    s.lambda_u = hyper_u_.lambda;
    s.mu_v = hyper_v_.mu;
    s.lambda_v = hyper_v_.lambda;
    return s;
  }

  const SamplerConfig& cfg_;
  const ChainInputs& in_;
  const SparseRatings& train_;
  const PartitionPlan& plan_;
  Transport& tx_;
  const ChainOptions& opt_;
  const ChainHooks& hooks_;
  NodeId self_;
  std::size_t k_;
  NwPrior prior_;
  tbb::task_arena arena_;
  LatentMatrix u_, v_;
  HyperParams hyper_u_, hyper_v_;
  bool have_hyper_ = false;
  double offset_ = 0.0;
  SideWork movies_, users_;
  std::vector<std::uint32_t> owned_tests_;
  std::vector<double> avg_;
  std::uint32_t start_ = 0;
};

}  // namespace

PosteriorResult run_chain(const SamplerConfig& config, const ChainInputs& inputs, Transport& transport,
                          const ChainOptions& options, const ChainHooks& hooks, const CheckpointState* resume) {
  config.validate();
  if (!inputs.train || !inputs.plan) fail(ErrorKind::kInvalidArgument, "chain inputs are incomplete");
  if (inputs.plan->num_nodes != transport.num_nodes()) {
    fail(ErrorKind::kInvalidArgument, fmt::format("plan has {} nodes but the transport has {}", inputs.plan->num_nodes,
                                                  transport.num_nodes()));
  }
  options.cost.validate();
  NodeChain chain(config, inputs, transport, options, hooks);
  if (resume) chain.resume(*resume);
  return chain.run();
}

}  // namespace bpmf
