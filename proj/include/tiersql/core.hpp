#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "tiersql/error.hpp"
#include "tiersql/text.hpp"

namespace tiersql {

using ojson = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Tier: the three generation pipelines, ordered by token cost.

enum class Tier : int { kBasic = 0, kIntermediate = 1, kAdvanced = 2 };

inline constexpr std::array<Tier, 3> kAllTiers = {Tier::kBasic, Tier::kIntermediate,
                                                  Tier::kAdvanced};
inline constexpr std::size_t kTierCount = kAllTiers.size();

constexpr std::size_t tier_index(Tier t) { return static_cast<std::size_t>(t); }

/// True iff `a` strictly precedes `b` in cost order.
constexpr bool tier_cheaper(Tier a, Tier b) { return tier_index(a) < tier_index(b); }

constexpr std::string_view tier_name(Tier t) {
  switch (t) {
    case Tier::kBasic: return "Basic";
    case Tier::kIntermediate: return "Intermediate";
    case Tier::kAdvanced: return "Advanced";
  }
  return "?";
}

/// Accepts the canonical names case-insensitively plus the G_B/G_M/G_A aliases.
inline Tier parse_tier(std::string_view s) {
  for (Tier t : kAllTiers) {
    if (text::iequals(s, tier_name(t))) return t;
  }
  if (text::iequals(s, "G_B") || text::iequals(s, "B")) return Tier::kBasic;
  if (text::iequals(s, "G_M") || text::iequals(s, "M")) return Tier::kIntermediate;
  if (text::iequals(s, "G_A") || text::iequals(s, "A")) return Tier::kAdvanced;
  throw Error(ErrorCode::kConfig, "unknown tier '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// Token accounting.

enum class Phase { kLinking, kRouting, kGeneration };

constexpr std::string_view phase_name(Phase p) {
  switch (p) {
    case Phase::kLinking: return "linking";
    case Phase::kRouting: return "routing";
    case Phase::kGeneration: return "generation";
  }
  return "?";
}

inline Phase parse_phase(std::string_view s) {
  for (Phase p : {Phase::kLinking, Phase::kRouting, Phase::kGeneration}) {
    if (text::iequals(s, phase_name(p))) return p;
  }
  throw Error(ErrorCode::kConfig, "unknown phase '" + std::string(s) + "'");
}

struct TokenUsage {
  std::int64_t prompt_tokens = 0;
  std::int64_t completion_tokens = 0;
  Phase phase = Phase::kGeneration;
  // Set when any contributing count was estimated from character length
  // rather than reported by the provider.
  bool estimated = false;

  bool operator==(const TokenUsage&) const = default;
};

inline TokenUsage merge_usage(const TokenUsage& a, const TokenUsage& b) {
  if (a.phase != b.phase) {
    throw Error(ErrorCode::kUsageMerge, "cannot merge " + std::string(phase_name(a.phase)) +
                                            " usage with " + std::string(phase_name(b.phase)));
  }
  return {a.prompt_tokens + b.prompt_tokens, a.completion_tokens + b.completion_tokens, a.phase,
          a.estimated || b.estimated};
}

// ---------------------------------------------------------------------------
// Queries.

enum class Difficulty { kSimple, kModerate, kChallenging };

inline constexpr std::array<Difficulty, 3> kAllDifficulties = {
    Difficulty::kSimple, Difficulty::kModerate, Difficulty::kChallenging};

constexpr std::string_view difficulty_name(Difficulty d) {
  switch (d) {
    case Difficulty::kSimple: return "simple";
    case Difficulty::kModerate: return "moderate";
    case Difficulty::kChallenging: return "challenging";
  }
  return "?";
}

inline std::optional<Difficulty> parse_difficulty(std::string_view s) {
  for (Difficulty d : kAllDifficulties) {
    if (text::iequals(s, difficulty_name(d))) return d;
  }
  return std::nullopt;
}

struct NLQuery {
  std::string id;
  std::string question;
  std::string hint;
  std::string db_id;
  std::optional<std::string> gold_sql;
  std::optional<Difficulty> difficulty;
};

/// The part of a query a router may see. Gold SQL is deliberately absent.
struct RouterQuery {
  std::string id;
  std::string question;
  std::string hint;

  static RouterQuery from(const NLQuery& q) { return {q.id, q.question, q.hint}; }
};

// ---------------------------------------------------------------------------
// Schemas.

struct ColumnDef {
  std::string name;
  std::string decl_type;
  std::optional<std::string> description;
  std::vector<std::string> sample_values;
};

struct ForeignKey {
  std::string column;
  std::string foreign_table;
  std::string foreign_column;
};

struct TableDef {
  std::string name;
  std::vector<ColumnDef> columns;
  std::vector<std::string> primary_key;
  std::vector<ForeignKey> foreign_keys;

  const ColumnDef* find_column(std::string_view column) const {
    for (const auto& c : columns) {
      if (text::iequals(c.name, column)) return &c;
    }
    return nullptr;
  }
};

struct DatabaseSchema {
  std::vector<TableDef> tables;

  const TableDef* find_table(std::string_view table) const {
    for (const auto& t : tables) {
      if (text::iequals(t.name, table)) return &t;
    }
    return nullptr;
  }

  std::size_t column_count() const {
    std::size_t n = 0;
    for (const auto& t : tables) n += t.columns.size();
    return n;
  }

  /// Throws kDataset when names collide or a foreign key dangles.
  void validate() const {
    for (std::size_t i = 0; i < tables.size(); ++i) {
      for (std::size_t j = i + 1; j < tables.size(); ++j) {
        if (text::iequals(tables[i].name, tables[j].name)) {
          throw Error(ErrorCode::kDataset, "duplicate table " + tables[i].name);
        }
      }
      const auto& cols = tables[i].columns;
      for (std::size_t a = 0; a < cols.size(); ++a) {
        for (std::size_t b = a + 1; b < cols.size(); ++b) {
          if (text::iequals(cols[a].name, cols[b].name)) {
            throw Error(ErrorCode::kDataset,
                        "duplicate column " + tables[i].name + "." + cols[a].name);
          }
        }
      }
      for (const auto& fk : tables[i].foreign_keys) {
        const TableDef* target = find_table(fk.foreign_table);
        if (tables[i].find_column(fk.column) == nullptr || target == nullptr ||
            (!fk.foreign_column.empty() && target->find_column(fk.foreign_column) == nullptr)) {
          throw Error(ErrorCode::kDataset, "dangling foreign key " + tables[i].name + "." +
                                               fk.column + " -> " + fk.foreign_table + "." +
                                               fk.foreign_column);
        }
      }
    }
  }
};

enum class LinkProvenance { kModel, kFallbackFull };

constexpr std::string_view provenance_name(LinkProvenance p) {
  return p == LinkProvenance::kModel ? "model" : "fallback_full";
}

struct LinkedTable {
  std::string table;
  std::vector<std::string> columns;

  bool operator==(const LinkedTable&) const = default;
};

/// A subset of a DatabaseSchema in the schema's canonical casing.
struct LinkedSchema {
  std::vector<LinkedTable> entries;
  LinkProvenance provenance = LinkProvenance::kModel;

  static LinkedSchema full(const DatabaseSchema& schema) {
    LinkedSchema out;
    out.provenance = LinkProvenance::kFallbackFull;
    for (const auto& t : schema.tables) {
      LinkedTable lt{t.name, {}};
      for (const auto& c : t.columns) lt.columns.push_back(c.name);
      out.entries.push_back(std::move(lt));
    }
    return out;
  }

  std::size_t column_count() const {
    std::size_t n = 0;
    for (const auto& e : entries) n += e.columns.size();
    return n;
  }

  bool contains(std::string_view table, std::string_view column) const {
    for (const auto& e : entries) {
      if (!text::iequals(e.table, table)) continue;
      for (const auto& c : e.columns) {
        if (text::iequals(c, column)) return true;
      }
    }
    return false;
  }

  bool operator==(const LinkedSchema&) const = default;
};

// ---------------------------------------------------------------------------
// Per-query run record.

struct StepRecord {
  std::string name;
  std::string digest;
  std::string flag;  // empty unless the step degraded ("unfenced", "degenerate", ...)
  TokenUsage usage;

  bool operator==(const StepRecord&) const = default;
};

struct RunTrace {
  std::string query_id;
  std::string router;
  Tier chosen_tier = Tier::kBasic;
  std::string predicted_sql;
  std::vector<TokenUsage> usage;
  std::optional<bool> correct;  // absent when the query had no gold SQL
  std::int64_t wall_clock_ms = 0;
  std::optional<Tier> oracle_label;
  LinkProvenance link_provenance = LinkProvenance::kModel;
  std::vector<StepRecord> steps;
  std::optional<std::string> error;
};

// ---------------------------------------------------------------------------
// JSON conversion. Field order is fixed so serialized files diff cleanly.

inline ojson to_json(const TokenUsage& u) {
  ojson j;
  j["phase"] = phase_name(u.phase);
  j["prompt_tokens"] = u.prompt_tokens;
  j["completion_tokens"] = u.completion_tokens;
  j["estimated"] = u.estimated;
  return j;
}

inline TokenUsage usage_from_json(const ojson& j) {
  TokenUsage u;
  u.phase = parse_phase(j.at("phase").get<std::string>());
  u.prompt_tokens = j.at("prompt_tokens").get<std::int64_t>();
  u.completion_tokens = j.at("completion_tokens").get<std::int64_t>();
  u.estimated = j.value("estimated", false);
  if (u.prompt_tokens < 0 || u.completion_tokens < 0) {
    throw Error(ErrorCode::kDecode, "negative token count");
  }
  return u;
}

inline ojson to_json(const LinkedSchema& s) {
  ojson arr = ojson::array();
  for (const auto& e : s.entries) {
    ojson t;
    t["table"] = e.table;
    t["columns"] = e.columns;
    arr.push_back(std::move(t));
  }
  return arr;
}

inline LinkedSchema linked_from_json(const ojson& j, LinkProvenance provenance) {
  LinkedSchema s;
  s.provenance = provenance;
  for (const auto& t : j) {
    s.entries.push_back({t.at("table").get<std::string>(),
                         t.at("columns").get<std::vector<std::string>>()});
  }
  return s;
}

inline ojson to_json(const StepRecord& s) {
  ojson j;
  j["name"] = s.name;
  j["digest"] = s.digest;
  if (!s.flag.empty()) j["flag"] = s.flag;
  j["usage"] = to_json(s.usage);
  return j;
}

inline StepRecord step_from_json(const ojson& j) {
  StepRecord s{j.at("name").get<std::string>(), j.at("digest").get<std::string>(),
               j.value("flag", std::string()), {}};
  if (j.contains("usage")) s.usage = usage_from_json(j["usage"]);
  return s;
}

/// Serializes the deterministic part of a trace. Wall-clock time lives in a
/// separate timings file so that replayed traces are byte-identical.
inline ojson to_json(const RunTrace& t) {
  ojson j;
  j["query_id"] = t.query_id;
  j["router"] = t.router;
  j["chosen_tier"] = tier_name(t.chosen_tier);
  j["predicted_sql"] = t.predicted_sql;
  ojson usage = ojson::array();
  for (const auto& u : t.usage) usage.push_back(to_json(u));
  j["usage"] = std::move(usage);
  j["correct"] = t.correct ? ojson(*t.correct) : ojson(nullptr);
  j["oracle_label"] = t.oracle_label ? ojson(tier_name(*t.oracle_label)) : ojson(nullptr);
  j["link_provenance"] = provenance_name(t.link_provenance);
  ojson steps = ojson::array();
  for (const auto& s : t.steps) steps.push_back(to_json(s));
  j["steps"] = std::move(steps);
  if (t.error) j["error"] = *t.error;
  return j;
}

inline RunTrace trace_from_json(const ojson& j) {
  RunTrace t;
  t.query_id = j.at("query_id").get<std::string>();
  t.router = j.value("router", std::string());
  t.chosen_tier = parse_tier(j.at("chosen_tier").get<std::string>());
  t.predicted_sql = j.value("predicted_sql", std::string());
  for (const auto& u : j.at("usage")) t.usage.push_back(usage_from_json(u));
  if (j.contains("correct") && !j["correct"].is_null()) t.correct = j["correct"].get<bool>();
  if (j.contains("oracle_label") && !j["oracle_label"].is_null()) {
    t.oracle_label = parse_tier(j["oracle_label"].get<std::string>());
  }
  t.link_provenance = j.value("link_provenance", std::string("model")) == "fallback_full"
                          ? LinkProvenance::kFallbackFull
                          : LinkProvenance::kModel;
  if (j.contains("steps")) {
    for (const auto& s : j["steps"]) t.steps.push_back(step_from_json(s));
  }
  if (j.contains("error")) t.error = j["error"].get<std::string>();
  t.wall_clock_ms = j.value("wall_clock_ms", std::int64_t{0});
  return t;
}

}  // namespace tiersql
