// tiersql command line: link, label, run, eval, report, cache.
#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>

#include "tiersql/tiersql.hpp"

namespace fs = std::filesystem;
using namespace tiersql;

namespace {

struct Common {
  std::string config;
  std::optional<std::size_t> limit;
  std::string mode;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c, bool with_limit = true) {
  cmd->add_option("--config", c.config, "run configuration (JSON)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--mode", c.mode, "gateway mode override")
      ->check(CLI::IsMember({"passthrough", "record", "replay_strict", "replay_fallback"}));
  cmd->add_option("--out", c.out, "output path");
  if (with_limit) cmd->add_option("--limit", c.limit, "process only the first N queries");
}

Config load(const Common& c) {
  Config cfg = load_config(c.config);
  if (!c.mode.empty()) cfg.gateway.mode = parse_gateway_mode(c.mode);
  return cfg;
}

void write_file(const fs::path& p, const std::string& content) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + p.string());
  out << content;
}

// ---------------------------------------------------------------------------

int cmd_link(const Common& c) {
  const Config cfg = load(c);
  const Dataset ds = load_dataset(cfg.dataset);
  auto gw = make_gateway(cfg);
  const fs::path out_path = c.out.empty() ? cfg.output_dir / "links.jsonl" : fs::path(c.out);
  std::size_t n = ds.queries.size();
  if (c.limit) n = std::min(n, *c.limit);

  std::vector<std::string> lines(n);
  std::vector<std::optional<metrics::LinkingQuality>> quality(n);
  detail::parallel_for(n, cfg.workers, [&](std::size_t i) {
    const NLQuery& q = ds.queries[i];
    const auto& schema = ds.registry.schema(q.db_id);
    const LinkResult r = link(q, schema, *gw, cfg.linker);
    ojson j;
    j["query_id"] = q.id;
    j["db_id"] = q.db_id;
    j["link_provenance"] = provenance_name(r.linked.provenance);
    j["linked_schema"] = to_json(r.linked);
    j["usage"] = to_json(r.usage);
    if (q.gold_sql) {
      const auto gold = metrics::gold_columns_from_sql(*q.gold_sql, schema);
      if (!gold.empty()) {
        quality[i] = metrics::linking_quality(r.linked, gold, schema);
        j["recall"] = quality[i]->recall;
        j["column_reduction"] = quality[i]->column_reduction;
      }
    }
    lines[i] = j.dump() + "\n";
  });
  std::string all;
  for (const auto& l : lines) all += l;
  write_file(out_path, all);

  double recall = 0, reduction = 0;
  std::size_t scored = 0;
  for (const auto& q : quality) {
    if (!q) continue;
    recall += q->recall;
    reduction += q->column_reduction;
    ++scored;
  }
  std::printf("linked %zu queries -> %s\n", n, out_path.string().c_str());
  if (scored > 0) {
    std::printf("mean recall %.4f, mean column reduction %.4f over %zu queries\n", recall / scored,
                reduction / scored, scored);
  }
  return 0;
}

int cmd_label(const Common& c, bool pairs_for_unsolved) {
  const Config cfg = load(c);
  if (!cfg.budget) {
    throw Error(ErrorCode::kConfig, "labeling requires a budget section (max_queries, max_weighted_tokens)");
  }
  const Dataset ds = load_dataset(cfg.dataset);
  auto gw = make_gateway(cfg);
  Pipelines pipelines(*gw, cfg.pipelines);
  const LabelRun run =
      label_dataset(ds, pipelines, *gw, cfg.linker, cfg.pipelines.executor, *cfg.budget, cfg.workers, c.limit);
  const fs::path out_path = c.out.empty() ? cfg.output_dir / "labels.jsonl" : fs::path(c.out);
  if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
  export_training_set(run.examples, out_path, {.pairs_for_unsolved = pairs_for_unsolved});

  const auto counts = label_counts(run.examples);
  std::size_t unsolved = 0;
  for (const auto& ex : run.examples) unsolved += ex.solved ? 0 : 1;
  std::printf("labeled %zu queries -> %s\n", run.examples.size(), out_path.string().c_str());
  std::printf("Basic %zu, Intermediate %zu, Advanced %zu (unsolved %zu)\n", counts[0], counts[1], counts[2],
              unsolved);
  std::printf("weighted tokens spent %.0f\n", run.spent);
  for (const auto& s : run.skipped) std::fprintf(stderr, "skipped %s\n", s.c_str());
  if (run.budget_exhausted) std::fprintf(stderr, "budget exhausted before the dataset was finished\n");
  return 0;
}

struct RunFlags {
  std::string router;
  std::string tier;
  std::string labels;
  std::string train;
  std::string endpoint;
  std::optional<std::size_t> k;
};

int cmd_run(const Common& c, const RunFlags& f) {
  Config cfg = load(c);
  if (!f.router.empty()) cfg.router.kind = parse_router_kind(f.router);
  if (!f.tier.empty()) {
    cfg.router.tier = parse_tier(f.tier);
    if (f.router.empty()) cfg.router.kind = RouterKind::kFixed;
  }
  if (!f.labels.empty()) cfg.router.labels_file = fs::absolute(f.labels);
  if (!f.train.empty()) cfg.router.train_file = fs::absolute(f.train);
  if (!f.endpoint.empty()) cfg.router.endpoint = f.endpoint;
  if (f.k) cfg.router.k = *f.k;

  const Dataset ds = load_dataset(cfg.dataset);
  auto gw = make_gateway(cfg);
  Pipelines pipelines(*gw, cfg.pipelines);
  BuiltRouter built = make_router(cfg.router);

  std::optional<std::map<std::string, Tier>> labels;
  if (!cfg.router.labels_file.empty() && fs::exists(cfg.router.labels_file)) {
    labels = load_oracle_labels(cfg.router.labels_file);
  }

  RunOptions opts;
  opts.output_dir = c.out.empty() ? cfg.output_dir / built.router->name() : fs::path(c.out);
  opts.workers = cfg.workers;
  opts.limit = c.limit;
  opts.linker = cfg.linker;
  opts.executor = cfg.pipelines.executor;
  opts.mu = cfg.mu;
  opts.oracle_labels = labels ? &*labels : nullptr;
  opts.manifest_extra = cfg.raw;
  opts.manifest_extra["router"]["kind"] = router_kind_name(cfg.router.kind);
  opts.manifest_extra["gateway"]["mode"] = gateway_mode_name(cfg.gateway.mode);

  const RunResult res = run_benchmark(ds, cfg.dataset.name, *built.router, pipelines, *gw, opts);
  std::size_t errors = 0;
  for (const auto& t : res.traces) errors += t.error ? 1 : 0;
  const auto v = metrics::verdicts(res.traces);
  std::printf("%s: %zu traces (%zu resumed, %zu errors) -> %s\n", built.router->name().c_str(),
              res.traces.size(), res.manifest.resumed, errors, opts.output_dir.string().c_str());
  if (!v.empty()) {
    std::printf("EX %.2f%%  avg tokens %.2f\n", metrics::ex(v) * 100,
                metrics::avg_tokens(res.traces, cfg.mu, cfg.phases));
  }
  return 0;
}

fs::path traces_path(const std::string& p) {
  fs::path path(p);
  return fs::is_directory(path) ? path / kTracesFile : path;
}

int cmd_eval(const std::vector<std::string>& inputs, double mu, const std::vector<std::string>& phase_names) {
  metrics::PhaseSet phases;
  for (const auto& p : phase_names) phases.insert(parse_phase(p));
  if (phases.empty()) phases = metrics::default_phases();
  for (const auto& in : inputs) {
    const auto traces = load_traces(traces_path(in));
    const auto v = metrics::verdicts(traces);
    const std::string name = traces.empty() ? in : traces.front().router;
    std::printf("%-14s N=%zu scored=%zu EX=%s avg_tokens=%s\n", name.c_str(), traces.size(), v.size(),
                v.empty() ? "-" : detail::fmt("%.2f%%", metrics::ex(v) * 100).c_str(),
                traces.empty() ? "-" : detail::fmt("%.2f", metrics::avg_tokens(traces, mu, phases)).c_str());
  }
  return 0;
}

int tier_rank(const std::string& name) {
  for (Tier t : kAllTiers)
    if (name == tier_name(t)) return static_cast<int>(tier_index(t));
  return static_cast<int>(kTierCount);
}

int cmd_report(const std::string& config_path, std::vector<std::string> runs, const std::string& out_dir) {
  ReportInputs in;
  fs::path out;
  if (!config_path.empty()) {
    const Config cfg = load_config(config_path);
    in.mu = cfg.mu;
    in.phases = cfg.phases;
    out = cfg.output_dir;
    if (runs.empty() && fs::is_directory(cfg.output_dir)) {
      for (const auto& e : fs::directory_iterator(cfg.output_dir)) {
        if (e.is_directory() && fs::exists(e.path() / kTracesFile)) runs.push_back(e.path().string());
      }
    }
    try {
      for (const auto& q : load_dataset(cfg.dataset).queries) {
        if (q.difficulty) in.difficulty_of[q.id] = *q.difficulty;
      }
    } catch (const Error& e) {
      std::fprintf(stderr, "difficulty breakdown unavailable: %s\n", e.what());
    }
  }
  if (!out_dir.empty()) out = out_dir;
  if (runs.empty()) throw Error(ErrorCode::kConfig, "no runs to report on");
  if (out.empty()) out = ".";

  for (const auto& r : runs) {
    auto traces = load_traces(traces_path(r));
    const std::string name = traces.empty() ? fs::path(r).filename().string() : traces.front().router;
    in.methods.emplace_back(name, std::move(traces));
  }
  std::stable_sort(in.methods.begin(), in.methods.end(), [](const auto& a, const auto& b) {
    const int ra = tier_rank(a.first), rb = tier_rank(b.first);
    return ra != rb ? ra < rb : a.first < b.first;
  });

  const MetricReport rep = build_report(in);
  const std::string text = report_text(rep);
  std::fputs(text.c_str(), stdout);
  fs::create_directories(out);
  write_file(out / "report.txt", text);
  write_file(out / "report.csv", report_csv(rep));
  write_file(out / "report.json", report_json(rep).dump(2) + "\n");
  std::vector<ParetoPoint> points;
  for (const auto& row : rep.rows) points.push_back({row.name, row.ex, row.avg_tokens});
  write_file(out / "pareto.svg", pareto_svg(points, rep.frontier));
  return 0;
}

int cmd_cache_inspect(const std::string& config_path) {
  const Config cfg = load_config(config_path);
  const ResponseCache cache(cfg.gateway.cache_dir);
  const auto digests = cache.digests();
  std::uintmax_t bytes = 0;
  std::size_t estimated = 0, corrupt = 0;
  std::map<std::string, std::size_t> by_model;
  for (const auto& d : digests) {
    bytes += fs::file_size(cache.path_for(d));
    try {
      const auto e = cache.load(d);
      if (e->response.usage.estimated) ++estimated;
      ++by_model[e->request.model];
      if (canonical_key(e->request) != d) ++corrupt;
    } catch (const Error&) {
      ++corrupt;
    }
  }
  std::printf("cache %s\n", cfg.gateway.cache_dir.string().c_str());
  std::printf("entries %zu, bytes %ju, estimated usage %zu, inconsistent %zu\n", digests.size(), bytes, estimated,
              corrupt);
  for (const auto& [model, n] : by_model) std::printf("  %-32s %zu\n", model.c_str(), n);
  return corrupt == 0 ? 0 : 1;
}

int cmd_cache_gc(const std::string& config_path, const std::vector<std::string>& keep_runs, bool dry_run) {
  const Config cfg = load_config(config_path);
  const ResponseCache cache(cfg.gateway.cache_dir);
  std::set<std::string> keep;
  for (const auto& r : keep_runs) {
    for (const auto& t : load_traces(traces_path(r))) {
      for (const auto& s : t.steps) keep.insert(s.digest);
    }
  }
  std::size_t removed = 0;
  for (const auto& d : cache.digests()) {
    if (keep.contains(d)) continue;
    ++removed;
    if (!dry_run) fs::remove(cache.path_for(d));
  }
  // Leftovers of interrupted writes.
  if (fs::is_directory(cache.dir())) {
    for (const auto& e : fs::directory_iterator(cache.dir())) {
      if (e.path().filename().string().find(".json.tmp.") != std::string::npos) {
        ++removed;
        if (!dry_run) fs::remove(e.path());
      }
    }
  }
  std::printf("%s %zu entries, kept %zu referenced\n", dry_run ? "would remove" : "removed", removed, keep.size());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tiersql: complexity-aware routing for Text-to-SQL"};
  app.set_version_flag("--version", std::string(kEngineVersion));
  app.require_subcommand(1);

  Common link_c, label_c, run_c;
  auto* link_cmd = app.add_subcommand("link", "schema-link every query and score linking quality");
  add_common(link_cmd, link_c);

  bool pairs_for_unsolved = false;
  auto* label_cmd = app.add_subcommand("label", "waterfall-label the dataset and export training JSONL");
  add_common(label_cmd, label_c);
  label_cmd->add_flag("--pairs-for-unsolved", pairs_for_unsolved, "emit preference pairs for unsolved queries");

  RunFlags rf;
  auto* run_cmd = app.add_subcommand("run", "link, route, generate and evaluate");
  add_common(run_cmd, run_c);
  run_cmd->add_option("--router", rf.router, "router kind")
      ->check(CLI::IsMember({"fixed", "knn", "cascade", "score", "oracle"}));
  run_cmd->add_option("--tier", rf.tier, "tier for the fixed router");
  run_cmd->add_option("--labels", rf.labels, "oracle labels (labeled JSONL)");
  run_cmd->add_option("--train", rf.train, "KNN training set (labeled JSONL)");
  run_cmd->add_option("--endpoint", rf.endpoint, "scorer service base URL");
  run_cmd->add_option("--k", rf.k, "KNN neighbours");

  std::vector<std::string> eval_inputs;
  double eval_mu = 4.0;
  std::vector<std::string> eval_phases;
  auto* eval_cmd = app.add_subcommand("eval", "EX and average tokens of trace files");
  eval_cmd->add_option("traces", eval_inputs, "trace files or run directories")->required();
  eval_cmd->add_option("--mu", eval_mu, "output token weight");
  eval_cmd->add_option("--phases", eval_phases, "token phases to count");

  std::string report_config, report_out;
  std::vector<std::string> report_runs;
  auto* report_cmd = app.add_subcommand("report", "metric table, CSV, JSON and Pareto plot");
  report_cmd->add_option("--config", report_config, "run configuration")->check(CLI::ExistingFile);
  report_cmd->add_option("runs", report_runs, "run directories (default: all under output_dir)");
  report_cmd->add_option("--out", report_out, "directory for report files");

  std::string cache_config;
  auto* cache_cmd = app.add_subcommand("cache", "inspect or garbage-collect the response cache");
  cache_cmd->require_subcommand(1);
  auto* inspect_cmd = cache_cmd->add_subcommand("inspect", "summarize cache contents");
  inspect_cmd->add_option("--config", cache_config)->required()->check(CLI::ExistingFile);
  std::vector<std::string> gc_keep;
  bool gc_dry = false;
  auto* gc_cmd = cache_cmd->add_subcommand("gc", "drop entries no kept run references");
  gc_cmd->add_option("--config", cache_config)->required()->check(CLI::ExistingFile);
  gc_cmd->add_option("--keep", gc_keep, "run directories whose responses are kept")->required();
  gc_cmd->add_flag("--dry-run", gc_dry);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*link_cmd) return cmd_link(link_c);
    if (*label_cmd) return cmd_label(label_c, pairs_for_unsolved);
    if (*run_cmd) return cmd_run(run_c, rf);
    if (*eval_cmd) return cmd_eval(eval_inputs, eval_mu, eval_phases);
    if (*report_cmd) return cmd_report(report_config, report_runs, report_out);
    if (*inspect_cmd) return cmd_cache_inspect(cache_config);
    if (*gc_cmd) return cmd_cache_gc(cache_config, gc_keep, gc_dry);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "tiersql: %s\n", e.what());
    return 1;
  }
  return 0;
}
