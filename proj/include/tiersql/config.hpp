#pragma once

#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <set>
#include <string>

#include "tiersql/dataset.hpp"
#include "tiersql/gateway.hpp"
#include "tiersql/http_provider.hpp"
#include "tiersql/labeler.hpp"
#include "tiersql/metrics.hpp"
#include "tiersql/pipelines.hpp"
#include "tiersql/schema_linker.hpp"
#include "tiersql/scorer_client.hpp"

// The run configuration: one JSON document. Relative paths resolve against
// the directory holding the file. Credentials never appear here, only the
// name of the environment variable that holds them.
namespace tiersql {

enum class RouterKind { kFixed, kKnn, kCascade, kScore, kOracle };

inline RouterKind parse_router_kind(std::string_view s) {
  if (s == "fixed") return RouterKind::kFixed;
  if (s == "knn") return RouterKind::kKnn;
  if (s == "cascade") return RouterKind::kCascade;
  if (s == "score") return RouterKind::kScore;
  if (s == "oracle") return RouterKind::kOracle;
  throw Error(ErrorCode::kConfig, "unknown router kind '" + std::string(s) + "'");
}

constexpr std::string_view router_kind_name(RouterKind k) {
  switch (k) {
    case RouterKind::kFixed: return "fixed";
    case RouterKind::kKnn: return "knn";
    case RouterKind::kCascade: return "cascade";
    case RouterKind::kScore: return "score";
    case RouterKind::kOracle: return "oracle";
  }
  return "?";
}

struct RouterConfig {
  RouterKind kind = RouterKind::kFixed;
  Tier tier = Tier::kBasic;
  std::size_t k = 5;
  std::filesystem::path train_file;   // knn: labeled JSONL
  std::filesystem::path labels_file;  // oracle router and trace annotation
  std::string endpoint;               // cascade / score
  ScorerMode mode = ScorerMode::kPreference;
  bool include_hint = true;
};

struct Config {
  std::filesystem::path source;  // the file this was read from
  DatasetSpec dataset;
  GatewayOptions gateway;
  HttpProviderOptions provider;
  LinkerOptions linker;
  PipelineOptions pipelines;
  RouterConfig router;
  std::optional<LabelBudget> budget;
  double mu = 4.0;
  metrics::PhaseSet phases = metrics::default_phases();
  int workers = 4;
  std::filesystem::path output_dir = "runs";
  ojson raw;  // as written, for the run manifest
};

namespace detail {

inline void reject_unknown(const ojson& j, std::initializer_list<std::string_view> allowed,
                           const std::string& where) {
  if (!j.is_object()) throw Error(ErrorCode::kConfig, where + " must be an object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (auto a : allowed) ok = ok || key == a;
    if (!ok) throw Error(ErrorCode::kConfig, "unknown key '" + key + "' in " + where);
  }
}

template <typename T>
T get_or(const ojson& j, const char* key, T fallback, const std::string& where) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw Error(ErrorCode::kConfig, where + "." + key + " has the wrong type");
  }
}

inline std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  if (p.empty()) return {};
  std::filesystem::path path(p);
  return path.is_absolute() ? path : (base / path).lexically_normal();
}

}  // namespace detail

inline Config parse_config(const ojson& j, const std::filesystem::path& base_dir) {
  using detail::get_or;
  using detail::reject_unknown;
  using detail::resolve;
  Config c;
  c.raw = j;
  reject_unknown(j, {"dataset", "gateway", "linker", "pipelines", "executor", "router", "budget", "mu",
                     "phases", "workers", "output_dir"},
                 "config");

  if (!j.contains("dataset")) throw Error(ErrorCode::kConfig, "config has no dataset section");
  const auto& d = j["dataset"];
  reject_unknown(d, {"name", "questions", "databases", "format", "descriptions", "sample_values"}, "dataset");
  c.dataset.name = get_or<std::string>(d, "name", "dataset", "dataset");
  c.dataset.questions_file = resolve(base_dir, get_or<std::string>(d, "questions", "", "dataset"));
  c.dataset.databases_dir = resolve(base_dir, get_or<std::string>(d, "databases", "", "dataset"));
  c.dataset.format = parse_dataset_format(get_or<std::string>(d, "format", "bird", "dataset"));
  c.dataset.load_descriptions = get_or<bool>(d, "descriptions", true, "dataset");
  c.dataset.sample_values = get_or<int>(d, "sample_values", 3, "dataset");
  if (c.dataset.questions_file.empty() || c.dataset.databases_dir.empty()) {
    throw Error(ErrorCode::kConfig, "dataset.questions and dataset.databases are required");
  }

  if (j.contains("gateway")) {
    const auto& g = j["gateway"];
    reject_unknown(g, {"mode", "cache_dir", "base_url", "api_key_env", "concurrency", "timeout_s",
                       "max_attempts"},
                   "gateway");
    c.gateway.mode = parse_gateway_mode(get_or<std::string>(g, "mode", "replay_strict", "gateway"));
    c.gateway.cache_dir = resolve(base_dir, get_or<std::string>(g, "cache_dir", "", "gateway"));
    c.gateway.concurrency = get_or<int>(g, "concurrency", 4, "gateway");
    c.provider.base_url = get_or<std::string>(g, "base_url", c.provider.base_url, "gateway");
    c.provider.api_key_env = get_or<std::string>(g, "api_key_env", c.provider.api_key_env, "gateway");
    c.provider.timeout = std::chrono::seconds(get_or<int>(g, "timeout_s", 120, "gateway"));
    c.provider.max_attempts = get_or<int>(g, "max_attempts", 3, "gateway");
    if (c.gateway.concurrency < 1) throw Error(ErrorCode::kConfig, "gateway.concurrency must be >= 1");
  }

  if (j.contains("linker")) {
    const auto& l = j["linker"];
    reject_unknown(l, {"model", "temperature", "malformed_retries"}, "linker");
    c.linker.model = get_or<std::string>(l, "model", c.linker.model, "linker");
    c.linker.temperature = get_or<double>(l, "temperature", 0.0, "linker");
    c.linker.malformed_retries = get_or<int>(l, "malformed_retries", 0, "linker");
  }

  if (j.contains("pipelines")) {
    const auto& p = j["pipelines"];
    reject_unknown(p, {"model", "temperature", "synth_k", "refine_rounds", "max_sub_questions",
                       "synth_per_subquestion"},
                   "pipelines");
    c.pipelines.model = get_or<std::string>(p, "model", c.pipelines.model, "pipelines");
    c.pipelines.temperature = get_or<double>(p, "temperature", 0.0, "pipelines");
    c.pipelines.synth_k = get_or<int>(p, "synth_k", 3, "pipelines");
    c.pipelines.refine_rounds = get_or<int>(p, "refine_rounds", 1, "pipelines");
    c.pipelines.max_sub_questions = get_or<std::size_t>(p, "max_sub_questions", 8, "pipelines");
    c.pipelines.synth_per_subquestion = get_or<bool>(p, "synth_per_subquestion", false, "pipelines");
  }

  if (j.contains("executor")) {
    const auto& e = j["executor"];
    reject_unknown(e, {"timeout_ms", "round_reals"}, "executor");
    c.pipelines.executor.timeout_ms = get_or<std::int64_t>(e, "timeout_ms", 30000, "executor");
    c.pipelines.executor.round_reals = get_or<bool>(e, "round_reals", false, "executor");
    if (c.pipelines.executor.timeout_ms <= 0) throw Error(ErrorCode::kConfig, "executor.timeout_ms must be > 0");
  }

  if (j.contains("router")) {
    const auto& r = j["router"];
    reject_unknown(r, {"kind", "tier", "k", "train_file", "labels_file", "endpoint", "mode", "include_hint"},
                   "router");
    c.router.kind = parse_router_kind(get_or<std::string>(r, "kind", "fixed", "router"));
    c.router.tier = parse_tier(get_or<std::string>(r, "tier", "Basic", "router"));
    c.router.k = get_or<std::size_t>(r, "k", 5, "router");
    c.router.train_file = resolve(base_dir, get_or<std::string>(r, "train_file", "", "router"));
    c.router.labels_file = resolve(base_dir, get_or<std::string>(r, "labels_file", "", "router"));
    c.router.endpoint = get_or<std::string>(r, "endpoint", "", "router");
    c.router.mode = parse_scorer_mode(get_or<std::string>(r, "mode", "preference", "router"));
    c.router.include_hint = get_or<bool>(r, "include_hint", true, "router");
  }

  if (j.contains("budget")) {
    const auto& b = j["budget"];
    reject_unknown(b, {"max_queries", "max_weighted_tokens"}, "budget");
    if (!b.contains("max_queries") || !b.contains("max_weighted_tokens")) {
      throw Error(ErrorCode::kConfig, "budget needs max_queries and max_weighted_tokens");
    }
    LabelBudget lb;
    lb.max_queries = get_or<std::size_t>(b, "max_queries", 0, "budget");
    lb.max_weighted_tokens = get_or<double>(b, "max_weighted_tokens", 0.0, "budget");
    c.budget = lb;
  }

  c.mu = get_or<double>(j, "mu", 4.0, "config");
  if (c.mu < 0) throw Error(ErrorCode::kConfig, "mu must be >= 0");
  if (c.budget) c.budget->mu = c.mu;
  if (j.contains("phases")) {
    if (!j["phases"].is_array() || j["phases"].empty()) {
      throw Error(ErrorCode::kConfig, "phases must be a non-empty array");
    }
    c.phases.clear();
    for (const auto& p : j["phases"]) {
      try {
        c.phases.insert(parse_phase(p.get<std::string>()));
      } catch (const std::exception& e) {
        throw Error(ErrorCode::kConfig, std::string("phases: ") + e.what());
      }
    }
  }
  c.workers = get_or<int>(j, "workers", 4, "config");
  if (c.workers < 1) throw Error(ErrorCode::kConfig, "workers must be >= 1");
  c.output_dir = resolve(base_dir, get_or<std::string>(j, "output_dir", "runs", "config"));
  return c;
}

inline Config load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kConfig, "cannot read config " + path.string());
  ojson j = ojson::parse(in, nullptr, false);
  if (j.is_discarded()) throw Error(ErrorCode::kConfig, path.string() + " is not valid JSON");
  Config c = parse_config(j, std::filesystem::absolute(path).parent_path());
  c.source = path;
  return c;
}

inline std::unique_ptr<Gateway> make_gateway(const Config& c) {
  std::shared_ptr<ChatProvider> provider;
  if (c.gateway.mode != GatewayMode::kReplayStrict) {
    provider = std::make_shared<HttpChatProvider>(c.provider);
  }
  return std::make_unique<Gateway>(c.gateway, std::move(provider));
}

inline std::map<std::string, Tier> load_oracle_labels(const std::filesystem::path& labels_file) {
  std::map<std::string, Tier> out;
  for (const auto& ex : import_training_set(labels_file)) out[ex.query_id] = ex.label;
  return out;
}

/// Router described by `r`. Scorer-backed routers keep `client` alive.
struct BuiltRouter {
  std::unique_ptr<ScorerClient> client;
  std::unique_ptr<Router> router;
};

inline BuiltRouter make_router(const RouterConfig& r) {
  BuiltRouter b;
  switch (r.kind) {
    case RouterKind::kFixed:
      b.router = std::make_unique<FixedRouter>(r.tier);
      break;
    case RouterKind::kKnn: {
      if (r.train_file.empty()) throw Error(ErrorCode::kConfig, "knn router needs router.train_file");
      b.router = std::make_unique<KnnRouter>(to_training_points(import_training_set(r.train_file)), r.k);
      break;
    }
    case RouterKind::kOracle: {
      if (r.labels_file.empty()) throw Error(ErrorCode::kConfig, "oracle router needs router.labels_file");
      b.router = std::make_unique<OracleRouter>(load_oracle_labels(r.labels_file));
      break;
    }
    case RouterKind::kCascade:
    case RouterKind::kScore: {
      if (r.endpoint.empty()) throw Error(ErrorCode::kConfig, "scorer routers need router.endpoint");
      b.client = std::make_unique<ScorerClient>(
          ScorerOptions{.endpoint = r.endpoint, .include_hint = r.include_hint});
      const ScorerClient* client = b.client.get();
      if (r.kind == RouterKind::kCascade) {
        std::vector<BinaryClassifier> stages;
        for (std::size_t i = 0; i + 1 < kTierCount; ++i) stages.push_back(client->classifier(kAllTiers[i]));
        b.router = std::make_unique<CascadeRouter>(std::move(stages));
      } else {
        if (r.mode == ScorerMode::kBinary) throw Error(ErrorCode::kConfig, "score router cannot use binary mode");
        const ScorerMode mode = r.mode;
        b.router = std::make_unique<ScoreRouter>(
            std::string(scorer_mode_name(mode)),
            [client, mode](const RouterQuery& q, const LinkedSchema& l) { return client->scores(mode, q, l); });
      }
      break;
    }
  }
  return b;
}

}  // namespace tiersql
