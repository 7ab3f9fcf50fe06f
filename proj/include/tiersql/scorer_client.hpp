#pragma once

#include <chrono>
#include <semaphore>
#include <string>

#include <httplib.h>

#include "tiersql/http_provider.hpp"
#include "tiersql/routers.hpp"

// Client side of the scorer protocol: POST /score with the query, hint,
// linked-schema counts and names; the service answers with per-tier scores
// or a binary verdict.
namespace tiersql {

enum class ScorerMode { kMulticlass, kBinary, kPreference };

constexpr std::string_view scorer_mode_name(ScorerMode m) {
  switch (m) {
    case ScorerMode::kMulticlass: return "multiclass";
    case ScorerMode::kBinary: return "binary";
    case ScorerMode::kPreference: return "preference";
  }
  return "?";
}

inline ScorerMode parse_scorer_mode(std::string_view s) {
  for (ScorerMode m : {ScorerMode::kMulticlass, ScorerMode::kBinary, ScorerMode::kPreference}) {
    if (s == scorer_mode_name(m)) return m;
  }
  throw Error(ErrorCode::kConfig, "unknown scorer mode '" + std::string(s) + "'");
}

inline ojson build_score_request(ScorerMode mode, std::optional<Tier> tier, const RouterQuery& q,
                                 const LinkedSchema& linked, bool include_hint = true) {
  if ((mode == ScorerMode::kBinary) != tier.has_value()) {
    throw Error(ErrorCode::kPrecondition, "tier is required iff mode is binary");
  }
  const FeatureVector f = build_features(linked);
  ojson j;
  j["mode"] = scorer_mode_name(mode);
  if (tier) j["tier"] = tier_name(*tier);
  j["question"] = q.question;
  j["hint"] = include_hint ? q.hint : std::string();
  j["n_tables"] = f.n_tables;
  j["n_columns"] = f.n_columns;
  j["linked_schema"] = to_json(linked);
  return j;
}

inline ScoreMap parse_score_response(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("scores") || !j["scores"].is_object()) {
    throw Error(ErrorCode::kProtocol, "response has no scores object");
  }
  ScoreMap out{};
  for (Tier t : kAllTiers) {
    const std::string key(tier_name(t));
    const auto& scores = j["scores"];
    if (!scores.contains(key)) throw Error(ErrorCode::kProtocol, "response is missing " + key);
    if (!scores[key].is_number()) throw Error(ErrorCode::kProtocol, key + " score is not a number");
    out[tier_index(t)] = scores[key].get<double>();
  }
  return out;
}

struct BinaryVerdict {
  bool verdict = false;
  double score = 0.0;
};

inline BinaryVerdict parse_binary_response(const nlohmann::json& j) {
  if (!j.is_object()) throw Error(ErrorCode::kProtocol, "response is not an object");
  if (!j.contains("verdict") || !j["verdict"].is_number_integer()) {
    throw Error(ErrorCode::kProtocol, "response has no integer verdict");
  }
  const auto v = j["verdict"].get<std::int64_t>();
  if (v != 0 && v != 1) throw Error(ErrorCode::kProtocol, "verdict must be 0 or 1");
  if (!j.contains("score") || !j["score"].is_number()) {
    throw Error(ErrorCode::kProtocol, "response has no numeric score");
  }
  return {v == 1, j["score"].get<double>()};
}

struct ScorerOptions {
  std::string endpoint = "http://127.0.0.1:8080";
  std::chrono::seconds timeout{30};
  int concurrency = 4;
  bool include_hint = true;
};

class ScorerClient {
 public:
  explicit ScorerClient(ScorerOptions opts)
      : opts_(std::move(opts)), url_(parse_base_url(opts_.endpoint)),
        slots_(std::max(1, opts_.concurrency)) {}

  ScoreMap scores(ScorerMode mode, const RouterQuery& q, const LinkedSchema& linked) const {
    return parse_score_response(post(build_score_request(mode, std::nullopt, q, linked, opts_.include_hint)));
  }

  BinaryVerdict verdict(Tier tier, const RouterQuery& q, const LinkedSchema& linked) const {
    return parse_binary_response(
        post(build_score_request(ScorerMode::kBinary, tier, q, linked, opts_.include_hint)));
  }

  BinaryClassifier classifier(Tier tier) const {
    return [this, tier](const RouterQuery& q, const LinkedSchema& linked) {
      return verdict(tier, q, linked).verdict;
    };
  }

 private:
  nlohmann::json post(const ojson& body) const {
    slots_.acquire();
    struct Release {
      std::counting_semaphore<>& s;
      ~Release() { s.release(); }
    } release{slots_};

    httplib::Client client(url_.scheme_host_port);
    client.set_connection_timeout(opts_.timeout);
    client.set_read_timeout(opts_.timeout);
    auto res = client.Post(url_.path_prefix + "/score", body.dump(), "application/json");
    if (!res) {
      throw Error(ErrorCode::kRouting, "scorer transport error: " + httplib::to_string(res.error()));
    }
    if (res->status != 200) {
      throw Error(ErrorCode::kRouting, "scorer returned HTTP " + std::to_string(res->status));
    }
    auto j = nlohmann::json::parse(res->body, nullptr, false);
    if (j.is_discarded()) throw Error(ErrorCode::kProtocol, "scorer response is not JSON");
    return j;
  }

  ScorerOptions opts_;
  ParsedUrl url_;
  mutable std::counting_semaphore<> slots_;
};

/// One multiclass/preference request against `endpoint`.
inline ScoreMap external_scores(const RouterQuery& q, const LinkedSchema& linked,
                                const std::string& endpoint,
                                ScorerMode mode = ScorerMode::kPreference) {
  return ScorerClient({.endpoint = endpoint}).scores(mode, q, linked);
}

}  // namespace tiersql
