// Copyright 2026 The bpmf-dist Authors
// SPDX-License-Identifier: Apache-2.0

#include "bpmf/engine.hpp"

#include <algorithm>
#include <atomic>
#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <thread>

#include <fmt/core.h>

#include "CLI11.hpp"
#include "json.hpp"
#include "bpmf/checkpoint.hpp"
#include "bpmf/metrics.hpp"
#include "bpmf/tcp_backend.hpp"

namespace bpmf {

namespace fs = std::filesystem;

ExitCode exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidArgument:
    case ErrorKind::kMoreNodesThanItems:
    case ErrorKind::kCheckpointMismatch:
      return ExitCode::kConfig;
    case ErrorKind::kParseError:
    case ErrorKind::kDuplicateEntry:
    case ErrorKind::kIndexOutOfHeaderBounds:
    case ErrorKind::kSchemaMismatch:
    case ErrorKind::kTooSparse:
    case ErrorKind::kEmpty:
    case ErrorKind::kIoError:
      return ExitCode::kData;
    case ErrorKind::kDisconnected:
    case ErrorKind::kTimeout:
    case ErrorKind::kChecksumFailure:
    case ErrorKind::kHandshakeMismatch:
    case ErrorKind::kDuplicateMessage:
    case ErrorKind::kTransportFailure:
      return ExitCode::kTransport;
    default:
      return ExitCode::kInternal;
  }
}

void RunConfig::validate() const {
  sampler.validate();
  if (train.empty()) fail(ErrorKind::kInvalidArgument, "--train is required");
  if (format != "mm" && format != "csv") fail(ErrorKind::kInvalidArgument, "--format must be mm or csv");
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) fail(ErrorKind::kInvalidArgument, "--test-fraction must be in (0, 1)");
  if (workers < 1) fail(ErrorKind::kInvalidArgument, "--workers must be at least 1");
  if (nodes < 1) fail(ErrorKind::kInvalidArgument, "--nodes must be at least 1");
  if (node_id >= nodes) fail(ErrorKind::kInvalidArgument, "--node-id must be smaller than --nodes");
  if (backend != "inproc" && backend != "tcp") fail(ErrorKind::kInvalidArgument, "--backend must be inproc or tcp");
  if (backend == "tcp" && nodes > 1 && peers.size() != nodes) {
    fail(ErrorKind::kInvalidArgument, fmt::format("--peers lists {} endpoints for {} nodes", peers.size(), nodes));
  }
  if (!(timeout_s > 0.0)) fail(ErrorKind::kInvalidArgument, "--timeout must be positive");
  if (csv_delimiter.empty()) fail(ErrorKind::kInvalidArgument, "--csv-delimiter must not be empty");
}

namespace {

std::string on_off(bool b) { return b ? "on" : "off"; }

bool parse_on_off(const std::string& flag, const std::string& v) {
  if (v == "on") return true;
  if (v == "off") return false;
  fail(ErrorKind::kInvalidArgument, fmt::format("{} takes on or off, not '{}'", flag, v));
}

std::string unescape_delimiter(const std::string& d) {
  if (d == "\\t" || d == "tab") return "\t";
  return d;
}

std::string escape_delimiter(const std::string& d) { return d == "\t" ? "tab" : d; }

struct FlagText {
  std::string center = "on";
  std::string clamp = "off";
  std::string reorder = "on";
  std::string csv_header = "on";
  std::string policy = "buffered:64";
  std::string peers;
  std::string delimiter = ",";
};

void build_app(CLI::App& app, RunConfig& c, FlagText& t, CLI::Option*& burnin) {
  auto env = [](const std::string& flag) {
    std::string name = "BPMF_";
    for (char ch : flag) name += ch == '-' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
    return name;
  };
  auto opt = [&](const std::string& flag, auto& target, const std::string& help) {
    return app.add_option("--" + flag, target, help)->envname(env(flag));
  };
  opt("train", c.train, "ratings file");
  opt("format", c.format, "input format")->check(CLI::IsMember({"mm", "csv"}))->capture_default_str();
  opt("csv-delimiter", t.delimiter, "CSV field separator (tab for tabs)")->capture_default_str();
  opt("csv-header", t.csv_header, "CSV has a header row {on,off}")->capture_default_str();
  opt("user-column", c.user_column, "CSV header name of the user id")->capture_default_str();
  opt("movie-column", c.movie_column, "CSV header name of the movie id")->capture_default_str();
  opt("rating-column", c.rating_column, "CSV header name of the rating")->capture_default_str();
  opt("test-fraction", c.test_fraction, "share of ratings held out")->capture_default_str();
  app.add_flag("--strict-split", c.strict_split, "fail instead of leaving a user or movie without training ratings")
      ->envname(env("strict-split"));
  opt("k", c.sampler.k, "latent dimension")->capture_default_str();
  opt("alpha", c.sampler.alpha, "rating noise precision")->capture_default_str();
  opt("iterations", c.sampler.iterations, "Gibbs iterations")->capture_default_str();
  burnin = opt("burnin", c.sampler.burnin, "iterations before averaging starts (default iterations/2)");
  opt("seed", c.sampler.seed, "random seed")->capture_default_str();
  opt("beta0", c.sampler.beta0, "Normal-Wishart beta0")->capture_default_str();
  opt("nu0", c.sampler.nu0, "Normal-Wishart degrees of freedom (0 means k)")->capture_default_str();
  opt("center", t.center, "subtract the training mean {on,off}")->capture_default_str();
  opt("clamp", t.clamp, "clamp predictions to the rating range {on,off}")->capture_default_str();
  opt("workers", c.workers, "worker threads per node")->capture_default_str();
  opt("nodes", c.nodes, "number of nodes")->capture_default_str();
  opt("node-id", c.node_id, "this process's node (tcp)")->capture_default_str();
  opt("peers", t.peers, "HOST:PORT per node, comma separated (tcp)");
  opt("backend", c.backend, "transport backend")->check(CLI::IsMember({"inproc", "tcp"}))->capture_default_str();
  opt("policy", t.policy, "send policy {eager,buffered:CAP,broadcast}")->capture_default_str();
  opt("out", c.out, "output directory")->capture_default_str();
  opt("checkpoint-every", c.checkpoint_every, "write a checkpoint every N iterations (0 = only at the end)")
      ->capture_default_str();
  opt("resume", c.resume, "continue from a checkpoint file");
  opt("reorder", t.reorder, "reorder for locality before partitioning {on,off}")->capture_default_str();
  opt("timeout", c.timeout_s, "seconds to wait for a phase to complete")->capture_default_str();
  opt("plan-in", c.plan_in, "use a saved partition plan");
  app.add_flag("--calibrate", c.calibrate, "time the update kernels and fit the cost model")->envname(env("calibrate"));
  opt("latency-us", c.latency_us, "inject per-write latency (inproc)")->capture_default_str();
}

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto comma = s.find(',', start);
    const auto piece = s.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    if (!piece.empty()) out.push_back(piece);
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

std::string fmt_double(double d) { return fmt::format("{:.17g}", d); }

}  // namespace

std::optional<RunConfig> parse_args(const std::vector<std::string>& args) {
  RunConfig c;
  FlagText t;
  CLI::App app{"Distributed Bayesian probabilistic matrix factorization (Gibbs sampler).", "bpmf"};
  CLI::Option* burnin = nullptr;
  build_app(app, c, t, burnin);
  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    std::cout << app.help();
    return std::nullopt;
  } catch (const CLI::ParseError& e) {
    fail(ErrorKind::kInvalidArgument, e.what());
  }
  c.sampler.center = parse_on_off("--center", t.center);
  c.sampler.clamp = parse_on_off("--clamp", t.clamp);
  c.reorder = parse_on_off("--reorder", t.reorder);
  c.csv_header = parse_on_off("--csv-header", t.csv_header);
  c.csv_delimiter = unescape_delimiter(t.delimiter);
  c.policy = SendPolicy::parse(t.policy);
  c.peers = split_csv(t.peers);
  if (burnin->count() == 0) c.sampler.burnin = c.sampler.iterations / 2;
  return c;
}

std::vector<std::string> to_args(const RunConfig& c) {
  std::vector<std::string> a;
  auto put = [&a](const std::string& flag, const std::string& value) {
    a.push_back("--" + flag);
    a.push_back(value);
  };
  if (!c.train.empty()) put("train", c.train);
  put("format", c.format);
  put("csv-delimiter", escape_delimiter(c.csv_delimiter));
  put("csv-header", on_off(c.csv_header));
  put("user-column", c.user_column);
  put("movie-column", c.movie_column);
  put("rating-column", c.rating_column);
  put("test-fraction", fmt_double(c.test_fraction));
  if (c.strict_split) a.push_back("--strict-split");
  put("k", std::to_string(c.sampler.k));
  put("alpha", fmt_double(c.sampler.alpha));
  put("iterations", std::to_string(c.sampler.iterations));
  put("burnin", std::to_string(c.sampler.burnin));
  put("seed", std::to_string(c.sampler.seed));
  put("beta0", fmt_double(c.sampler.beta0));
  put("nu0", fmt_double(c.sampler.nu0));
  put("center", on_off(c.sampler.center));
  put("clamp", on_off(c.sampler.clamp));
  put("workers", std::to_string(c.workers));
  put("nodes", std::to_string(c.nodes));
  put("node-id", std::to_string(c.node_id));
  if (!c.peers.empty()) {
    std::string joined;
    for (const auto& p : c.peers) joined += (joined.empty() ? "" : ",") + p;
    put("peers", joined);
  }
  put("backend", c.backend);
  put("policy", c.policy.to_string());
  put("out", c.out);
  put("checkpoint-every", std::to_string(c.checkpoint_every));
  if (!c.resume.empty()) put("resume", c.resume);
  put("reorder", on_off(c.reorder));
  put("timeout", fmt_double(c.timeout_s));
  if (!c.plan_in.empty()) put("plan-in", c.plan_in);
  if (c.calibrate) a.push_back("--calibrate");
  put("latency-us", std::to_string(c.latency_us));
  return a;
}

std::string usage() {
  RunConfig c;
  FlagText t;
  CLI::App app{"Distributed Bayesian probabilistic matrix factorization (Gibbs sampler).", "bpmf"};
  CLI::Option* burnin = nullptr;
  build_app(app, c, t, burnin);
  return app.help();
}

std::unique_ptr<PreparedData> prepare_data(SparseRatings ratings, double test_fraction, std::uint64_t split_seed,
                                           const PlanOptions& plan_options, const SplitOptions& split_options) {
  auto d = std::make_unique<PreparedData>();
  d->ratings = std::move(ratings);
  d->split = split_train_test(d->ratings, test_fraction, split_seed, split_options);
  auto all = d->split.train.triples();
  all.insert(all.end(), d->split.test.begin(), d->split.test.end());
  d->pattern = SparseRatings::from_triples(d->ratings.num_users(), d->ratings.num_movies(), std::move(all));
  d->plan = make_plan(d->split.train, d->pattern, plan_options);
  d->train = d->split.train.permuted(d->plan.row_perm, d->plan.col_perm);
  d->test.reserve(d->split.test.size());
  for (const auto& r : d->split.test) {
    d->test.push_back({d->plan.row_perm.to_new(r.user), d->plan.col_perm.to_new(r.movie), r.value});
  }
  d->digest = data_digest(d->split.train, d->split.test);
  return d;
}

std::vector<PosteriorResult> run_local_cluster(const SamplerConfig& config, const ChainInputs& inputs,
                                               const ClusterOptions& options, const ChainHooks& hooks,
                                               const CheckpointState* resume) {
  if (options.nodes < 1) fail(ErrorKind::kInvalidArgument, "cluster needs at least one node");
  auto fabric = InProcessFabric::create(options.nodes);
  fabric->set_write_latency(options.latency);
  if (options.fault) fabric->set_fault_hook(options.fault);

  ChainHooks peer_hooks;
  peer_hooks.stop_requested = hooks.stop_requested;
  peer_hooks.checkpoint_every = hooks.checkpoint_every;
  const ChainOptions chain_options{options.workers, options.cost};

  std::vector<PosteriorResult> results(options.nodes);
  std::vector<std::exception_ptr> errors(options.nodes);
  // Transports exist before any node starts so early frames find a receiver.
  std::vector<std::unique_ptr<Transport>> transports;
  for (NodeId i = 0; i < options.nodes; ++i) {
    transports.push_back(std::make_unique<Transport>(fabric->endpoint(i), TransportOptions{options.policy, options.timeout}));
  }
  auto body = [&](NodeId i) {
    try {
      results[i] = run_chain(config, inputs, *transports[i], chain_options, i == 0 ? hooks : peer_hooks, resume);
      transports[i]->close();
    } catch (...) {
      errors[i] = std::current_exception();
      try {
        transports[i]->close();
      } catch (...) {
      }
    }
  };
  if (options.nodes == 1) {
    body(0);
  } else {
    std::vector<std::thread> threads;
    for (NodeId i = 0; i < options.nodes; ++i) threads.emplace_back(body, i);
    for (auto& th : threads) th.join();
  }
  transports.clear();
  // Report the root cause rather than the disconnects it triggered.
  std::exception_ptr first, fallback;
  for (const auto& e : errors) {
    if (!e) continue;
    if (!fallback) fallback = e;
    try {
      std::rethrow_exception(e);
    } catch (const Error& err) {
      if (err.kind() != ErrorKind::kDisconnected && !first) first = e;
    } catch (...) {
      if (!first) first = e;
    }
  }
  if (first) std::rethrow_exception(first);
  if (fallback) std::rethrow_exception(fallback);
  return results;
}

namespace {

std::atomic<bool> g_stop{false};

extern "C" void handle_stop_signal(int) { g_stop.store(true); }

class SignalGuard {
 public:
  SignalGuard() {
    g_stop.store(false);
    previous_int_ = std::signal(SIGINT, handle_stop_signal);
    previous_term_ = std::signal(SIGTERM, handle_stop_signal);
  }
  ~SignalGuard() {
    std::signal(SIGINT, previous_int_);
    std::signal(SIGTERM, previous_term_);
  }

 private:
  void (*previous_int_)(int) = SIG_DFL;
  void (*previous_term_)(int) = SIG_DFL;
};

std::string label(const std::optional<IdMap>& map, std::uint32_t index) {
  if (map && index < map->external.size()) return map->external[index];
  return std::to_string(index + 1);
}

void write_predictions(const PreparedData& d, const std::vector<double>& predictions, const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorKind::kIoError, fmt::format("cannot write {}", path.string()));
  out << "user,movie,rating,prediction\n";
  for (std::size_t i = 0; i < d.split.test.size(); ++i) {
    const auto& r = d.split.test[i];
    out << fmt::format("{},{},{:.17g},{:.17g}\n", label(d.users, r.user), label(d.movies, r.movie), r.value,
                       predictions[i]);
  }
  if (!out) fail(ErrorKind::kIoError, fmt::format("short write to {}", path.string()));
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  out << text;
  if (!out) fail(ErrorKind::kIoError, fmt::format("cannot write {}", path.string()));
}

int run_engine_impl(const RunConfig& c) {
  c.validate();
  const fs::path out_dir(c.out);
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) fail(ErrorKind::kIoError, fmt::format("cannot create {}: {}", c.out, ec.message()));

  SparseRatings ratings;
  std::optional<IdMap> users, movies;
  if (c.format == "mm") {
    ratings = load_matrix_market(c.train);
  } else {
    CsvSchema schema;
    schema.delimiter = c.csv_delimiter;
    schema.has_header = c.csv_header;
    schema.user_column = c.user_column;
    schema.movie_column = c.movie_column;
    schema.rating_column = c.rating_column;
    auto loaded = load_ratings_csv(c.train, schema);
    ratings = std::move(loaded.ratings);
    users = std::move(loaded.users);
    movies = std::move(loaded.movies);
  }

  PlanOptions plan_options;
  plan_options.num_nodes = c.nodes;
  plan_options.reorder = c.reorder;
  if (c.calibrate) {
    const auto report = calibrate(ratings, c.sampler.k);
    plan_options.cost = report.model;
    write_text(out_dir / "calibration.txt", report.to_text());
  }
  SplitOptions split_options;
  split_options.strict_coverage = c.strict_split;
  auto data = prepare_data(std::move(ratings), c.test_fraction, c.sampler.seed, plan_options, split_options);
  data->users = std::move(users);
  data->movies = std::move(movies);
  if (!c.plan_in.empty()) {
    data->plan = read_plan(c.plan_in, data->split.train, data->pattern, plan_options.cost);
    if (data->plan.num_nodes != c.nodes) fail(ErrorKind::kInvalidArgument, "saved plan has a different node count");
    data->train = data->split.train.permuted(data->plan.row_perm, data->plan.col_perm);
    for (std::size_t i = 0; i < data->test.size(); ++i) {
      const auto& r = data->split.test[i];
      data->test[i] = {data->plan.row_perm.to_new(r.user), data->plan.col_perm.to_new(r.movie), r.value};
    }
  }
  if (data->users) write_id_map(*data->users, out_dir / "users.csv");
  if (data->movies) write_id_map(*data->movies, out_dir / "movies.csv");

  const bool tcp = c.backend == "tcp" && c.nodes > 1;
  const NodeId node = tcp ? c.node_id : 0;
  if (node == 0) write_plan(data->plan, out_dir / "plan.json");

  std::optional<CheckpointState> resume;
  if (!c.resume.empty()) {
    try {
      resume = read_checkpoint(c.resume);
    } catch (const Error& e) {
      fail(ErrorKind::kParseError, fmt::format("cannot resume: {}", e.what()));
    }
  }

  const std::string suffix = node == 0 ? "" : fmt::format("-node{}", node);
  MetricsSink sink(out_dir / ("metrics" + suffix + ".csv"), out_dir / ("log" + suffix + ".jsonl"), node);
  const fs::path checkpoint_path = out_dir / "checkpoint.bin";

  ChainHooks hooks;
  hooks.checkpoint_every = c.checkpoint_every;
  hooks.stop_requested = [] { return g_stop.load(); };
  hooks.on_iteration = [&](const IterationRecord& rec) {
    sink.emit(MetricsRecord::from(rec));
    std::cerr << fmt::format("iteration {:>4}  rmse {:.6f}  avg {:.6f}  {:.0f} updates/s\n", rec.iteration,
                             rec.rmse_sample, rec.rmse_avg, rec.updates_per_sec);
  };
  hooks.on_checkpoint = [&](const CheckpointState& s) { write_checkpoint(s, checkpoint_path); };

  SignalGuard guard;
  PosteriorResult result;
  const auto timeout = std::chrono::milliseconds(static_cast<long long>(c.timeout_s * 1000.0));
  if (tcp) {
    TcpOptions tcp_options;
    tcp_options.endpoints = c.peers;
    tcp_options.hello = {c.node_id, c.nodes, c.sampler.k, wire::seed_digest(c.sampler.seed)};
    tcp_options.connect_timeout = timeout;
    Transport tx(std::make_unique<TcpBackend>(tcp_options), {c.policy, timeout});
    result = run_chain(c.sampler, data->inputs(), tx, {c.workers, plan_options.cost}, hooks,
                       resume ? &*resume : nullptr);
    tx.close();
  } else {
    ClusterOptions cluster;
    cluster.nodes = c.nodes;
    cluster.workers = c.workers;
    cluster.policy = c.policy;
    cluster.latency = std::chrono::microseconds(c.latency_us);
    cluster.timeout = timeout;
    cluster.cost = plan_options.cost;
    result = std::move(run_local_cluster(c.sampler, data->inputs(), cluster, hooks, resume ? &*resume : nullptr)[0]);
  }

  if (result.has_state) {
    write_checkpoint(result.state, checkpoint_path);
    write_predictions(*data, result.state.avg_predictions, out_dir / "predictions.csv");
    nlohmann::json summary = {
        {"iterations", result.iterations_done},
        {"stopped", result.stopped},
        {"nodes", c.nodes},
        {"workers", c.workers},
        {"policy", c.policy.to_string()},
        {"users", data->train.num_users()},
        {"movies", data->train.num_movies()},
        {"train_ratings", data->train.nnz()},
        {"test_ratings", data->test.size()},
        {"reorder", c.reorder},
        {"comm_volume", data->plan.comm.volume()},
        {"overlap_fraction", result.stats.overlap_fraction()},
    };
    if (!result.trace.empty()) {
      summary["rmse_sample"] = result.trace.back().rmse_sample;
      summary["rmse_avg"] = result.trace.back().rmse_avg;
    }
    write_text(out_dir / "summary.json", summary.dump(2) + "\n");
  }
  return static_cast<int>(result.stopped ? ExitCode::kInterrupted : ExitCode::kOk);
}

}  // namespace

int run_engine(const RunConfig& config) {
  try {
    return run_engine_impl(config);
  } catch (const Error& e) {
    std::cerr << "bpmf: error: " << e.what() << '\n';
    return static_cast<int>(exit_code_for(e.kind()));
  } catch (const std::exception& e) {
    std::cerr << "bpmf: internal error: " << e.what() << '\n';
    return static_cast<int>(ExitCode::kInternal);
  }
}

int cli_main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  std::optional<RunConfig> config;
  try {
    config = parse_args(args);
  } catch (const Error& e) {
    std::cerr << "bpmf: " << e.what() << "\nRun with --help for usage.\n";
    return static_cast<int>(ExitCode::kConfig);
  }
  if (!config) return static_cast<int>(ExitCode::kOk);
  return run_engine(*config);
}

}  // namespace bpmf
