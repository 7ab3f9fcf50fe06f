#pragma once

#include <array>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "tiersql/core.hpp"
#include "tiersql/pipelines.hpp"
#include "tiersql/routers.hpp"
#include "tiersql/sqlexec.hpp"

namespace tiersql {

struct TierOutcome {
  std::string sql;
  bool correct = false;
  TokenUsage usage{0, 0, Phase::kGeneration, false};
  std::optional<std::string> error;

  bool operator==(const TierOutcome&) const = default;
};

struct LabeledExample {
  std::string query_id;
  Tier label = Tier::kAdvanced;
  bool solved = false;
  // Indexed by tier_index(); tiers above the label were never attempted.
  std::array<std::optional<TierOutcome>, kTierCount> outcomes;
  FeatureVector features;
  std::string question;
  std::string hint;
  LinkedSchema linked_schema;

  bool operator==(const LabeledExample&) const = default;
};

struct PreferencePair {
  Tier preferred = Tier::kBasic;
  Tier rejected = Tier::kIntermediate;

  bool operator==(const PreferencePair&) const = default;
};

/// The labeled tier beats every other tier.
inline std::vector<PreferencePair> derive_preference_pairs(Tier label) {
  std::vector<PreferencePair> out;
  for (Tier t : kAllTiers) {
    if (t != label) out.push_back({label, t});
  }
  return out;
}

/// Runs one tier and reports whether it matched gold.
using TierAttempt = std::function<TierOutcome(Tier)>;

/// Cheapest-first attempts; stops at the first success. When every tier
/// fails the label is the most capable tier with solved = false.
inline LabeledExample waterfall_label(const NLQuery& q, const LinkedSchema& linked,
                                      const TierAttempt& attempt) {
  if (!q.gold_sql) throw Error(ErrorCode::kPrecondition, "query " + q.id + " has no gold SQL");
  LabeledExample ex;
  ex.query_id = q.id;
  ex.question = q.question;
  ex.hint = q.hint;
  ex.linked_schema = linked;
  ex.features = build_features(linked);
  ex.label = kAllTiers.back();
  for (Tier t : kAllTiers) {
    TierOutcome o = attempt(t);
    const bool ok = o.correct;
    ex.outcomes[tier_index(t)] = std::move(o);
    if (ok) {
      ex.label = t;
      ex.solved = true;
      break;
    }
  }
  return ex;
}

/// Generates with `pipelines` and checks against gold. Generation errors
/// count as failures; gold that cannot execute aborts the query.
inline TierOutcome attempt_tier(Tier tier, const GenerationInput& in, TierPipelines& pipelines,
                                const sql::ExecutorOptions& exec) {
  TierOutcome o;
  try {
    GenerationResult r = pipelines.generate(tier, in);
    o.sql = std::move(r.sql);
    o.usage = r.usage;
  } catch (const GenerationFailure& e) {
    o.usage = e.partial().usage;
    o.error = e.what();
    return o;
  } catch (const Error& e) {
    o.error = e.what();
    return o;
  }
  o.correct = sql::ex_match(o.sql, *in.query.gold_sql, in.db_path, exec);
  return o;
}

inline LabeledExample waterfall_label(const GenerationInput& in, TierPipelines& pipelines,
                                      const sql::ExecutorOptions& exec = {}) {
  return waterfall_label(in.query, in.linked,
                         [&](Tier t) { return attempt_tier(t, in, pipelines, exec); });
}

// ---------------------------------------------------------------------------
// Budget.

struct LabelBudget {
  std::size_t max_queries = 0;
  double max_weighted_tokens = 0.0;
  double mu = 4.0;
};

/// Thread-safe admission control for the labeling loop. A query is admitted
/// while both the query count and the weighted spend so far are under budget.
class BudgetTracker {
 public:
  explicit BudgetTracker(LabelBudget b) : budget_(b) {
    if (b.max_queries == 0) throw Error(ErrorCode::kConfig, "budget.max_queries must be >= 1");
    if (!(b.max_weighted_tokens > 0.0)) {
      throw Error(ErrorCode::kConfig, "budget.max_weighted_tokens must be > 0");
    }
  }

  bool try_admit() {
    std::lock_guard lock(mu_);
    if (admitted_ >= budget_.max_queries || spent_ >= budget_.max_weighted_tokens) return false;
    ++admitted_;
    return true;
  }

  void charge(const TokenUsage& u) {
    std::lock_guard lock(mu_);
    spent_ += static_cast<double>(u.prompt_tokens) +
              budget_.mu * static_cast<double>(u.completion_tokens);
  }

  double spent() const {
    std::lock_guard lock(mu_);
    return spent_;
  }
  std::size_t admitted() const {
    std::lock_guard lock(mu_);
    return admitted_;
  }

 private:
  LabelBudget budget_;
  mutable std::mutex mu_;
  std::size_t admitted_ = 0;
  double spent_ = 0.0;
};

// ---------------------------------------------------------------------------
// Training-set JSONL.

struct ExportOptions {
  // Unsolved queries carry no pairs unless this is set.
  bool pairs_for_unsolved = false;
};

inline ojson to_json(const LabeledExample& ex, const ExportOptions& opts = {}) {
  ojson j;
  j["query_id"] = ex.query_id;
  j["label"] = tier_name(ex.label);
  j["solved"] = ex.solved;
  j["features"] = {{"n_tables", ex.features.n_tables}, {"n_columns", ex.features.n_columns}};
  j["question"] = ex.question;
  j["hint"] = ex.hint;
  j["linked_schema"] = to_json(ex.linked_schema);
  j["link_provenance"] = provenance_name(ex.linked_schema.provenance);
  ojson pairs = ojson::array();
  if (ex.solved || opts.pairs_for_unsolved) {
    for (const auto& p : derive_preference_pairs(ex.label)) {
      pairs.push_back({{"preferred", tier_name(p.preferred)}, {"rejected", tier_name(p.rejected)}});
    }
  }
  j["preference_pairs"] = std::move(pairs);
  ojson outcomes = ojson::object();
  for (Tier t : kAllTiers) {
    const auto& o = ex.outcomes[tier_index(t)];
    if (!o) continue;
    ojson oj;
    oj["sql"] = o->sql;
    oj["correct"] = o->correct;
    oj["usage"] = to_json(o->usage);
    if (o->error) oj["error"] = *o->error;
    outcomes[std::string(tier_name(t))] = std::move(oj);
  }
  j["outcomes"] = std::move(outcomes);
  return j;
}

inline LabeledExample labeled_from_json(const ojson& j) {
  LabeledExample ex;
  try {
    ex.query_id = j.at("query_id").get<std::string>();
    ex.label = parse_tier(j.at("label").get<std::string>());
    ex.solved = j.at("solved").get<bool>();
    ex.features.n_tables = j.at("features").at("n_tables").get<std::int64_t>();
    ex.features.n_columns = j.at("features").at("n_columns").get<std::int64_t>();
    ex.question = j.at("question").get<std::string>();
    ex.hint = j.value("hint", std::string());
    const auto prov = j.value("link_provenance", std::string("model")) == "fallback_full"
                          ? LinkProvenance::kFallbackFull
                          : LinkProvenance::kModel;
    ex.linked_schema = linked_from_json(j.at("linked_schema"), prov);
    if (j.contains("outcomes")) {
      for (const auto& [name, oj] : j["outcomes"].items()) {
        TierOutcome o;
        o.sql = oj.at("sql").get<std::string>();
        o.correct = oj.at("correct").get<bool>();
        o.usage = usage_from_json(oj.at("usage"));
        if (oj.contains("error")) o.error = oj["error"].get<std::string>();
        ex.outcomes[tier_index(parse_tier(name))] = std::move(o);
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kDecode, std::string("labeled example: ") + e.what());
  }
  return ex;
}

inline void export_training_set(const std::vector<LabeledExample>& examples,
                                const std::filesystem::path& path, const ExportOptions& opts = {}) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  for (const auto& ex : examples) out << to_json(ex, opts).dump() << '\n';
  if (!out) throw Error(ErrorCode::kIo, "write failed for " + path.string());
}

inline std::vector<LabeledExample> import_training_set(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot read " + path.string());
  std::vector<LabeledExample> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    auto j = ojson::parse(line, nullptr, false);
    if (j.is_discarded()) {
      throw Error(ErrorCode::kDecode, path.string() + ":" + std::to_string(line_no) + ": not JSON");
    }
    try {
      out.push_back(labeled_from_json(j));
    } catch (const Error& e) {
      throw Error(ErrorCode::kDecode, path.string() + ":" + std::to_string(line_no) + ": " + e.detail());
    }
  }
  return out;
}

inline std::array<std::size_t, kTierCount> label_counts(const std::vector<LabeledExample>& examples) {
  std::array<std::size_t, kTierCount> counts{};
  for (const auto& ex : examples) ++counts[tier_index(ex.label)];
  return counts;
}

inline std::vector<LabeledPoint> to_training_points(const std::vector<LabeledExample>& examples) {
  std::vector<LabeledPoint> out;
  out.reserve(examples.size());
  for (const auto& ex : examples) out.push_back({ex.features, ex.label});
  return out;
}

}  // namespace tiersql
