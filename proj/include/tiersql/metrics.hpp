#pragma once

#include <array>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "tiersql/core.hpp"

namespace tiersql::metrics {

/// Fraction of true verdicts.
inline double ex(const std::vector<bool>& verdicts) {
  if (verdicts.empty()) throw Error(ErrorCode::kUndefinedMetric, "EX of an empty verdict list");
  std::size_t hits = 0;
  for (bool v : verdicts) hits += v ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(verdicts.size());
}

inline double weighted_tokens(const TokenUsage& u, double mu) {
  if (mu < 0) throw Error(ErrorCode::kPrecondition, "mu must be >= 0");
  return static_cast<double>(u.prompt_tokens) + mu * static_cast<double>(u.completion_tokens);
}

using PhaseSet = std::set<Phase>;

inline const PhaseSet& default_phases() {
  static const PhaseSet p{Phase::kGeneration};
  return p;
}

inline double trace_weighted_tokens(const RunTrace& t, double mu,
                                    const PhaseSet& phases = default_phases()) {
  double total = 0.0;
  for (const auto& u : t.usage) {
    if (phases.contains(u.phase)) total += weighted_tokens(u, mu);
  }
  return total;
}

/// Mean weighted cost per query over the selected phases.
inline double avg_tokens(const std::vector<RunTrace>& traces, double mu,
                         const PhaseSet& phases = default_phases()) {
  if (traces.empty()) throw Error(ErrorCode::kUndefinedMetric, "average tokens of no traces");
  double total = 0.0;
  for (const auto& t : traces) total += trace_weighted_tokens(t, mu, phases);
  return total / static_cast<double>(traces.size());
}

/// Share of the weak-to-strong EX gap recovered by a router.
inline double pgr(double ex_r, double ex_b, double ex_a) {
  if (ex_a == ex_b) throw Error(ErrorCode::kDegenerateGap, "strong and weak EX are equal");
  return (ex_r - ex_b) / (ex_a - ex_b);
}

/// Relative EX gain over relative token increase, both against the basic tier.
inline double tep(double ex_g, double ex_b, double t_g, double t_b) {
  if (ex_b == 0.0 || t_b == 0.0) {
    throw Error(ErrorCode::kUndefinedBaseline, "baseline EX and tokens must be non-zero");
  }
  if (t_g == t_b) throw Error(ErrorCode::kDegenerateCost, "token cost equals the baseline");
  return ((ex_g - ex_b) / ex_b) / ((t_g - t_b) / t_b);
}

/// counts[oracle][routed] in tier order.
struct DisagreementMatrix {
  std::array<std::array<std::int64_t, kTierCount>, kTierCount> counts{};

  std::int64_t total() const {
    std::int64_t n = 0;
    for (const auto& row : counts)
      for (auto c : row) n += c;
    return n;
  }
  std::int64_t& at(Tier oracle, Tier routed) { return counts[tier_index(oracle)][tier_index(routed)]; }
  std::int64_t at(Tier oracle, Tier routed) const {
    return counts[tier_index(oracle)][tier_index(routed)];
  }
  bool operator==(const DisagreementMatrix&) const = default;
};

inline DisagreementMatrix disagreement(const std::vector<Tier>& oracle, const std::vector<Tier>& routed) {
  if (oracle.size() != routed.size()) {
    throw Error(ErrorCode::kLengthMismatch, std::to_string(oracle.size()) + " oracle labels vs " +
                                                std::to_string(routed.size()) + " routed tiers");
  }
  DisagreementMatrix m;
  for (std::size_t i = 0; i < oracle.size(); ++i) ++m.at(oracle[i], routed[i]);
  return m;
}

/// Share of queries routed to a tier at least as capable as the oracle's.
inline double utr(const DisagreementMatrix& m) {
  for (const auto& row : m.counts)
    for (auto c : row)
      if (c < 0) throw Error(ErrorCode::kPrecondition, "negative count in disagreement matrix");
  const std::int64_t total = m.total();
  if (total == 0) throw Error(ErrorCode::kUndefinedMetric, "UTR of an all-zero matrix");
  std::int64_t upper = 0;
  for (std::size_t i = 0; i < kTierCount; ++i)
    for (std::size_t j = i; j < kTierCount; ++j) upper += m.counts[i][j];
  return static_cast<double>(upper) / static_cast<double>(total);
}

inline double agreement(const DisagreementMatrix& m) {
  const std::int64_t total = m.total();
  if (total == 0) throw Error(ErrorCode::kUndefinedMetric, "agreement of an all-zero matrix");
  std::int64_t diag = 0;
  for (std::size_t i = 0; i < kTierCount; ++i) diag += m.counts[i][i];
  return static_cast<double>(diag) / static_cast<double>(total);
}

// ---------------------------------------------------------------------------
// Schema linking quality.

using ColumnRef = std::pair<std::string, std::string>;  // (table, column)

struct LinkingQuality {
  double recall = 0.0;
  double column_reduction = 0.0;
};

inline LinkingQuality linking_quality(const LinkedSchema& linked, const std::vector<ColumnRef>& gold,
                                      const DatabaseSchema& full) {
  if (gold.empty()) throw Error(ErrorCode::kUndefinedMetric, "linking recall with no gold columns");
  const std::size_t full_cols = full.column_count();
  if (full_cols == 0) throw Error(ErrorCode::kUndefinedMetric, "schema has no columns");
  std::size_t hit = 0;
  for (const auto& [t, c] : gold) hit += linked.contains(t, c) ? 1 : 0;
  LinkingQuality q;
  q.recall = static_cast<double>(hit) / static_cast<double>(gold.size());
  q.column_reduction =
      1.0 - static_cast<double>(linked.column_count()) / static_cast<double>(full_cols);
  return q;
}

namespace detail {

// Identifier-like tokens of a SQL string: bare words plus the contents of
// "..", `..` and [..] quoting. String literals are skipped.
inline std::vector<std::string> sql_identifiers(std::string_view sql) {
  std::vector<std::string> out;
  std::size_t i = 0;
  auto ident_char = [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || (static_cast<unsigned char>(c) & 0x80);
  };
  while (i < sql.size()) {
    const char c = sql[i];
    if (c == '\'') {
      ++i;
      while (i < sql.size()) {
        if (sql[i] == '\'' && i + 1 < sql.size() && sql[i + 1] == '\'') {
          i += 2;
        } else if (sql[i] == '\'') {
          ++i;
          break;
        } else {
          ++i;
        }
      }
    } else if (c == '"' || c == '`' || c == '[') {
      const char close = c == '[' ? ']' : c;
      const std::size_t end = sql.find(close, i + 1);
      if (end == std::string_view::npos) break;
      out.emplace_back(sql.substr(i + 1, end - i - 1));
      i = end + 1;
    } else if (ident_char(c)) {
      const std::size_t start = i;
      while (i < sql.size() && ident_char(sql[i])) ++i;
      out.emplace_back(sql.substr(start, i - start));
    } else {
      ++i;
    }
  }
  return out;
}

}  // namespace detail

/// Columns referenced by a gold query: identifiers matching a column of a
/// table that the query also names. Canonical schema casing, sorted, unique.
inline std::vector<ColumnRef> gold_columns_from_sql(std::string_view sql, const DatabaseSchema& schema) {
  const auto idents = detail::sql_identifiers(sql);
  std::set<std::string> lowered;
  for (const auto& id : idents) lowered.insert(text::to_lower(id));
  std::set<ColumnRef> found;
  for (const auto& t : schema.tables) {
    if (!lowered.contains(text::to_lower(t.name))) continue;
    for (const auto& c : t.columns) {
      if (lowered.contains(text::to_lower(c.name))) found.insert({t.name, c.name});
    }
  }
  return {found.begin(), found.end()};
}

// ---------------------------------------------------------------------------
// Descriptive statistics.

/// Kendall's tau-b. Pairs tied in both series are ignored; returns NaN when
/// either series is constant.
inline double kendall_tau(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw Error(ErrorCode::kLengthMismatch, "kendall_tau series lengths differ");
  if (x.size() < 2) throw Error(ErrorCode::kUndefinedMetric, "kendall_tau needs two or more points");
  std::int64_t concordant = 0, discordant = 0, tie_x = 0, tie_y = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    for (std::size_t j = i + 1; j < x.size(); ++j) {
      const double dx = x[i] - x[j];
      const double dy = y[i] - y[j];
      if (dx == 0 && dy == 0) continue;
      if (dx == 0) {
        ++tie_x;
      } else if (dy == 0) {
        ++tie_y;
      } else if ((dx > 0) == (dy > 0)) {
        ++concordant;
      } else {
        ++discordant;
      }
    }
  }
  const double n0 = static_cast<double>(concordant + discordant);
  const double denom = std::sqrt((n0 + static_cast<double>(tie_x)) * (n0 + static_cast<double>(tie_y)));
  if (denom == 0.0) return std::nan("");
  return static_cast<double>(concordant - discordant) / denom;
}

struct Tally {
  std::size_t correct = 0;
  std::size_t total = 0;

  double rate() const { return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total); }
};

/// EX split by difficulty tag. Queries without a tag or a verdict are skipped.
inline std::map<Difficulty, Tally> ex_by_difficulty(
    const std::vector<RunTrace>& traces, const std::map<std::string, Difficulty>& difficulty_of) {
  std::map<Difficulty, Tally> out;
  for (const auto& t : traces) {
    if (!t.correct) continue;
    const auto it = difficulty_of.find(t.query_id);
    if (it == difficulty_of.end()) continue;
    auto& tally = out[it->second];
    ++tally.total;
    if (*t.correct) ++tally.correct;
  }
  return out;
}

/// Verdicts of traces that have one; a trace whose generation failed
/// counts as incorrect.
inline std::vector<bool> verdicts(const std::vector<RunTrace>& traces) {
  std::vector<bool> out;
  out.reserve(traces.size());
  for (const auto& t : traces) {
    if (t.correct) out.push_back(*t.correct);
  }
  return out;
}

inline std::int64_t total_wall_clock_ms(const std::vector<RunTrace>& traces) {
  std::int64_t total = 0;
  for (const auto& t : traces) total += t.wall_clock_ms;
  return total;
}

}  // namespace tiersql::metrics
