#pragma once

#include <atomic>
#include <chrono>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "tiersql/config.hpp"
#include "tiersql/dataset.hpp"
#include "tiersql/labeler.hpp"
#include "tiersql/pipelines.hpp"
#include "tiersql/routers.hpp"
#include "tiersql/schema_linker.hpp"

namespace tiersql {

#ifndef TIERSQL_VERSION
#define TIERSQL_VERSION "dev"
#endif

inline constexpr std::string_view kEngineVersion = TIERSQL_VERSION;

inline constexpr std::string_view kTracesFile = "traces.jsonl";
inline constexpr std::string_view kTimingsFile = "timings.jsonl";
inline constexpr std::string_view kManifestFile = "manifest.json";

namespace detail {

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline void write_atomically(const std::filesystem::path& path, const std::string& content) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::kIo, "cannot write " + tmp.string());
    out << content;
    if (!out) throw Error(ErrorCode::kIo, "write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

// Systemic problems abort a run; anything else is recorded per query.
inline bool is_systemic(ErrorCode c) {
  return c == ErrorCode::kConfig || c == ErrorCode::kDataset || c == ErrorCode::kEnvironment ||
         c == ErrorCode::kIo;
}

/// Runs `body(i)` for i in [0, n) on up to `workers` threads. The first
/// exception stops further work and is rethrown.
inline void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& body) {
  std::atomic<std::size_t> next{0};
  std::atomic<bool> stop{false};
  std::exception_ptr failure;
  std::mutex failure_mu;
  auto loop = [&] {
    for (;;) {
      if (stop.load()) return;
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        body(i);
      } catch (...) {
        std::lock_guard lock(failure_mu);
        if (!failure) failure = std::current_exception();
        stop = true;
        return;
      }
    }
  };
  const int count = std::max(1, std::min<int>(workers, static_cast<int>(std::max<std::size_t>(n, 1))));
  {
    std::vector<std::jthread> pool;
    for (int w = 1; w < count; ++w) pool.emplace_back(loop);
    loop();
  }
  if (failure) std::rethrow_exception(failure);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Benchmark runs.

struct RunOptions {
  std::filesystem::path output_dir;  // traces, timings and manifest land here
  int workers = 4;
  std::optional<std::size_t> limit;
  LinkerOptions linker;
  sql::ExecutorOptions executor;
  double mu = 4.0;
  // Annotates traces with stored oracle labels when present.
  const std::map<std::string, Tier>* oracle_labels = nullptr;
  ojson manifest_extra;  // merged into the manifest (config, router settings)
};

struct RunManifest {
  std::string run_id;
  std::string dataset;
  std::string router;
  std::string gateway_mode;
  double mu = 4.0;
  std::string started_at;
  std::string finished_at;
  std::size_t queries = 0;
  std::size_t resumed = 0;
  ojson extra;
};

inline ojson to_json(const RunManifest& m) {
  ojson j;
  j["run_id"] = m.run_id;
  j["engine_version"] = kEngineVersion;
  j["dataset"] = m.dataset;
  j["router"] = m.router;
  j["gateway_mode"] = m.gateway_mode;
  j["mu"] = m.mu;
  j["started_at"] = m.started_at;
  j["finished_at"] = m.finished_at;
  j["queries"] = m.queries;
  j["resumed"] = m.resumed;
  if (!m.extra.is_null()) j["config"] = m.extra;
  return j;
}

struct RunResult {
  std::vector<RunTrace> traces;  // dataset order
  RunManifest manifest;
};

/// Link, route, generate and check one query. Errors that concern only this
/// query end up in the trace.
inline RunTrace run_query(const NLQuery& q, const DatabaseSchema& schema, const std::filesystem::path& db_path,
                          const Router& router, TierPipelines& pipelines, const Gateway& gw,
                          const RunOptions& opts) {
  RunTrace t;
  t.query_id = q.id;
  t.router = router.name();
  if (opts.oracle_labels) {
    if (auto it = opts.oracle_labels->find(q.id); it != opts.oracle_labels->end()) t.oracle_label = it->second;
  }
  TokenUsage link_usage{0, 0, Phase::kLinking, false};
  TokenUsage route_usage{0, 0, Phase::kRouting, false};
  TokenUsage gen_usage{0, 0, Phase::kGeneration, false};
  auto finish = [&] {
    t.usage = {link_usage, route_usage, gen_usage};
    return t;
  };
  auto fail = [&](const std::string& stage, const std::exception& e) {
    if (const auto* err = dynamic_cast<const Error*>(&e); err != nullptr && detail::is_systemic(err->code())) {
      throw;
    }
    t.error = stage + ": " + e.what();
    if (q.gold_sql && !t.correct) t.correct = false;
    return finish();
  };

  LinkResult linked;
  try {
    linked = link(q, schema, gw, opts.linker);
  } catch (const std::exception& e) {
    return fail("link", e);
  }
  link_usage = linked.usage;
  t.link_provenance = linked.linked.provenance;
  t.steps = linked.steps;

  RoutingDecision decision;
  try {
    decision = router.route(RouterQuery::from(q), linked.linked);
  } catch (const std::exception& e) {
    return fail("route", e);
  }
  route_usage = decision.router_usage;
  t.chosen_tier = decision.tier;

  const GenerationInput in{q, schema, linked.linked, db_path};
  try {
    GenerationResult r = pipelines.generate(decision.tier, in);
    gen_usage = r.usage;
    t.predicted_sql = std::move(r.sql);
    t.steps.insert(t.steps.end(), r.steps.begin(), r.steps.end());
  } catch (const GenerationFailure& e) {
    gen_usage = e.partial().usage;
    t.steps.insert(t.steps.end(), e.partial().steps.begin(), e.partial().steps.end());
    return fail("generate", e);
  } catch (const std::exception& e) {
    return fail("generate", e);
  }

  if (q.gold_sql) {
    try {
      t.correct = sql::ex_match(t.predicted_sql, *q.gold_sql, db_path, opts.executor);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kGoldError) throw;
      // A broken gold query is surfaced, not scored.
      t.error = std::string("evaluate: ") + e.what();
      t.correct.reset();
    }
  }
  return finish();
}

/// Traces already on disk, keyed by query id. A torn final line from an
/// interrupted run is ignored.
inline std::map<std::string, RunTrace> read_existing_traces(const std::filesystem::path& dir) {
  std::map<std::string, RunTrace> out;
  std::ifstream in(dir / kTracesFile, std::ios::binary);
  if (!in) return out;
  std::map<std::string, std::int64_t> timings;
  std::ifstream tin(dir / kTimingsFile, std::ios::binary);
  std::string line;
  while (tin && std::getline(tin, line)) {
    auto j = ojson::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("query_id")) continue;
    timings[j["query_id"].get<std::string>()] = j.value("wall_clock_ms", std::int64_t{0});
  }
  while (std::getline(in, line)) {
    auto j = ojson::parse(line, nullptr, false);
    if (j.is_discarded()) continue;
    try {
      RunTrace t = trace_from_json(j);
      if (auto it = timings.find(t.query_id); it != timings.end()) t.wall_clock_ms = it->second;
      out[t.query_id] = std::move(t);
    } catch (const std::exception&) {
      continue;
    }
  }
  return out;
}

inline std::vector<RunTrace> load_traces(const std::filesystem::path& traces_file) {
  std::ifstream in(traces_file, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot read " + traces_file.string());
  std::vector<RunTrace> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    auto j = ojson::parse(line, nullptr, false);
    if (j.is_discarded()) {
      throw Error(ErrorCode::kDecode, traces_file.string() + ":" + std::to_string(line_no) + ": not JSON");
    }
    try {
      out.push_back(trace_from_json(j));
    } catch (const std::exception& e) {
      throw Error(ErrorCode::kDecode, traces_file.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  // Wall-clock times live next to the traces.
  const auto timings_path = traces_file.parent_path() / kTimingsFile;
  if (std::filesystem::exists(timings_path)) {
    std::map<std::string, std::int64_t> timings;
    std::ifstream tin(timings_path, std::ios::binary);
    while (std::getline(tin, line)) {
      auto j = ojson::parse(line, nullptr, false);
      if (j.is_discarded() || !j.contains("query_id")) continue;
      timings[j["query_id"].get<std::string>()] = j.value("wall_clock_ms", std::int64_t{0});
    }
    for (auto& t : out) {
      if (auto it = timings.find(t.query_id); it != timings.end()) t.wall_clock_ms = it->second;
    }
  }
  return out;
}

inline std::string traces_to_jsonl(const std::vector<RunTrace>& traces) {
  std::string out;
  for (const auto& t : traces) out += to_json(t).dump() + "\n";
  return out;
}

inline std::string timings_to_jsonl(const std::vector<RunTrace>& traces) {
  std::string out;
  for (const auto& t : traces) {
    ojson j;
    j["query_id"] = t.query_id;
    j["wall_clock_ms"] = t.wall_clock_ms;
    out += j.dump() + "\n";
  }
  return out;
}

/// Runs every query (up to `limit`) through link -> route -> generate ->
/// execute. Traces are appended as they complete and the files are
/// rewritten in dataset order at the end. Queries already traced in
/// `output_dir` by the same router are skipped.
inline RunResult run_benchmark(const Dataset& ds, const std::string& dataset_name, const Router& router,
                               TierPipelines& pipelines, const Gateway& gw, const RunOptions& opts) {
  namespace fs = std::filesystem;
  if (opts.output_dir.empty()) throw Error(ErrorCode::kConfig, "run output directory not set");
  fs::create_directories(opts.output_dir);

  std::size_t n = ds.queries.size();
  if (opts.limit) n = std::min(n, *opts.limit);

  RunResult result;
  result.manifest.dataset = dataset_name;
  result.manifest.router = router.name();
  result.manifest.gateway_mode = gateway_mode_name(gw.mode());
  result.manifest.mu = opts.mu;
  result.manifest.started_at = detail::utc_timestamp();
  result.manifest.run_id = router.name() + "-" + result.manifest.started_at;
  result.manifest.extra = opts.manifest_extra;

  auto existing = read_existing_traces(opts.output_dir);
  for (const auto& [id, t] : existing) {
    if (t.router != router.name()) {
      throw Error(ErrorCode::kConfig, "output directory " + opts.output_dir.string() +
                                          " holds traces of router " + t.router);
    }
  }

  std::vector<std::optional<RunTrace>> slots(n);
  std::vector<std::size_t> todo;
  for (std::size_t i = 0; i < n; ++i) {
    if (auto it = existing.find(ds.queries[i].id); it != existing.end()) {
      slots[i] = it->second;
      ++result.manifest.resumed;
    } else {
      todo.push_back(i);
    }
  }

  // Start from a clean copy of what survived, then append.
  {
    std::vector<RunTrace> kept;
    for (const auto& s : slots)
      if (s) kept.push_back(*s);
    detail::write_atomically(opts.output_dir / kTracesFile, traces_to_jsonl(kept));
    detail::write_atomically(opts.output_dir / kTimingsFile, timings_to_jsonl(kept));
  }
  std::ofstream traces_out(opts.output_dir / kTracesFile, std::ios::binary | std::ios::app);
  std::ofstream timings_out(opts.output_dir / kTimingsFile, std::ios::binary | std::ios::app);
  if (!traces_out || !timings_out) throw Error(ErrorCode::kIo, "cannot append to " + opts.output_dir.string());
  std::mutex append_mu;

  detail::parallel_for(todo.size(), opts.workers, [&](std::size_t k) {
    const std::size_t i = todo[k];
    const NLQuery& q = ds.queries[i];
    const auto start = std::chrono::steady_clock::now();
    RunTrace t = run_query(q, ds.registry.schema(q.db_id), ds.registry.db_path(q.db_id), router, pipelines,
                           gw, opts);
    t.wall_clock_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                          std::chrono::steady_clock::now() - start)
                          .count();
    std::lock_guard lock(append_mu);
    traces_out << to_json(t).dump() << '\n' << std::flush;
    ojson timing;
    timing["query_id"] = t.query_id;
    timing["wall_clock_ms"] = t.wall_clock_ms;
    timings_out << timing.dump() << '\n' << std::flush;
    slots[i] = std::move(t);
  });
  traces_out.close();
  timings_out.close();

  for (auto& s : slots) result.traces.push_back(std::move(*s));
  detail::write_atomically(opts.output_dir / kTracesFile, traces_to_jsonl(result.traces));
  detail::write_atomically(opts.output_dir / kTimingsFile, timings_to_jsonl(result.traces));
  result.manifest.queries = result.traces.size();
  result.manifest.finished_at = detail::utc_timestamp();
  detail::write_atomically(opts.output_dir / kManifestFile, to_json(result.manifest).dump(2) + "\n");
  return result;
}

// ---------------------------------------------------------------------------
// Labeling over a dataset.

struct LabelRun {
  std::vector<LabeledExample> examples;  // dataset order
  std::vector<std::string> skipped;      // "<id>: reason"
  bool budget_exhausted = false;
  double spent = 0.0;
};

/// Links each gold-bearing query and labels it by waterfall. Stops admitting
/// queries once the budget is used up.
inline LabelRun label_dataset(const Dataset& ds, TierPipelines& pipelines, const Gateway& gw,
                              const LinkerOptions& linker, const sql::ExecutorOptions& exec,
                              const LabelBudget& budget, int workers,
                              std::optional<std::size_t> limit = std::nullopt) {
  BudgetTracker tracker(budget);
  std::size_t n = ds.queries.size();
  if (limit) n = std::min(n, *limit);
  std::vector<std::optional<LabeledExample>> slots(n);
  std::vector<std::string> skipped(n);
  std::atomic<bool> exhausted{false};

  detail::parallel_for(n, workers, [&](std::size_t i) {
    const NLQuery& q = ds.queries[i];
    if (!q.gold_sql) {
      skipped[i] = q.id + ": no gold SQL";
      return;
    }
    if (!tracker.try_admit()) {
      exhausted = true;
      return;
    }
    const auto& schema = ds.registry.schema(q.db_id);
    LinkResult linked;
    try {
      linked = link(q, schema, gw, linker);
    } catch (const Error& e) {
      if (detail::is_systemic(e.code())) throw;
      skipped[i] = q.id + ": " + e.what();
      return;
    }
    tracker.charge(linked.usage);
    const GenerationInput in{q, schema, linked.linked, ds.registry.db_path(q.db_id)};
    try {
      LabeledExample ex = waterfall_label(in, pipelines, exec);
      for (const auto& o : ex.outcomes)
        if (o) tracker.charge(o->usage);
      slots[i] = std::move(ex);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kGoldError) throw;
      skipped[i] = q.id + ": " + e.what();
    }
  });

  LabelRun run;
  for (std::size_t i = 0; i < n; ++i) {
    if (slots[i]) run.examples.push_back(std::move(*slots[i]));
    if (!skipped[i].empty()) run.skipped.push_back(skipped[i]);
  }
  run.budget_exhausted = exhausted;
  run.spent = tracker.spent();
  return run;
}

}  // namespace tiersql
