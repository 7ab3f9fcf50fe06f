#pragma once

#include <chrono>
#include <cmath>
#include <compare>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <set>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <sqlite3.h>

#include "tiersql/error.hpp"
#include "tiersql/text.hpp"

namespace tiersql::sql {

struct Blob {
  std::string hex;
  auto operator<=>(const Blob&) const = default;
};

/// One canonical cell per SQLite storage class.
using Cell = std::variant<std::monostate, std::int64_t, double, std::string, Blob>;
using Row = std::vector<Cell>;
/// Set semantics: duplicate rows collapse, row order is irrelevant, column
/// order within a row is significant.
using ResultSet = std::set<Row>;

struct ExecError {
  std::string message;
};
struct ExecTimeout {};

using ExecOutcome = std::variant<ResultSet, ExecError, ExecTimeout>;

inline bool is_ok(const ExecOutcome& o) { return std::holds_alternative<ResultSet>(o); }
inline bool is_timeout(const ExecOutcome& o) { return std::holds_alternative<ExecTimeout>(o); }

inline std::string describe(const ExecOutcome& o) {
  if (const auto* rs = std::get_if<ResultSet>(&o)) {
    return rs->empty() ? "empty result" : std::to_string(rs->size()) + " rows";
  }
  if (const auto* err = std::get_if<ExecError>(&o)) return "error: " + err->message;
  return "timed out";
}

inline std::string cell_to_string(const Cell& c) {
  struct Visitor {
    std::string operator()(std::monostate) const { return "NULL"; }
    std::string operator()(std::int64_t v) const { return std::to_string(v); }
    std::string operator()(double v) const {
      char buf[64];
      std::snprintf(buf, sizeof buf, "%.17g", v);
      return buf;
    }
    std::string operator()(const std::string& v) const { return v; }
    std::string operator()(const Blob& b) const { return "x'" + b.hex + "'"; }
  };
  return std::visit(Visitor{}, c);
}

struct ExecutorOptions {
  std::int64_t timeout_ms = 30'000;
  // Round reals to 15 significant digits before comparison.
  bool round_reals = false;
};

namespace detail {

inline double round_15(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.15g", v);
  return std::strtod(buf, nullptr);
}

/// Uppercased bare words of a SQL string, skipping literals, quoted
/// identifiers and comments.
inline std::vector<std::string> bare_words(std::string_view sql) {
  std::vector<std::string> words;
  std::size_t i = 0;
  const std::size_t n = sql.size();
  auto skip_quoted = [&](char close) {
    ++i;
    while (i < n) {
      if (sql[i] == close) {
        if (i + 1 < n && sql[i + 1] == close && close != ']') {
          i += 2;
          continue;
        }
        ++i;
        return;
      }
      ++i;
    }
  };
  while (i < n) {
    const char c = sql[i];
    if (c == '\'') { skip_quoted('\''); continue; }
    if (c == '"') { skip_quoted('"'); continue; }
    if (c == '`') { skip_quoted('`'); continue; }
    if (c == '[') { skip_quoted(']'); continue; }
    if (c == '-' && i + 1 < n && sql[i + 1] == '-') {
      while (i < n && sql[i] != '\n') ++i;
      continue;
    }
    if (c == '/' && i + 1 < n && sql[i + 1] == '*') {
      const auto end = sql.find("*/", i + 2);
      i = end == std::string_view::npos ? n : end + 2;
      continue;
    }
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      const std::size_t start = i;
      while (i < n && (std::isalnum(static_cast<unsigned char>(sql[i])) || sql[i] == '_')) ++i;
      words.push_back(text::to_upper(sql.substr(start, i - start)));
      continue;
    }
    ++i;
  }
  return words;
}

/// Empty when the statement looks read-only, else the offending keyword.
inline std::string mutation_keyword(std::string_view sql) {
  static const std::set<std::string> kForbidden = {
      "INSERT", "UPDATE", "DELETE", "DROP", "CREATE", "ALTER",
      "ATTACH", "DETACH", "VACUUM", "REINDEX", "PRAGMA"};
  const auto words = bare_words(sql);
  if (words.empty()) return {};
  if (words.front() == "REPLACE") return "REPLACE";
  for (const auto& w : words) {
    if (kForbidden.contains(w)) return w;
  }
  return {};
}

inline bool only_trailing_noise(const char* tail) {
  return tail == nullptr || bare_words(tail).empty();
}

class Connection {
 public:
  explicit Connection(const std::filesystem::path& db_path) {
    if (!std::filesystem::is_regular_file(db_path)) {
      throw Error(ErrorCode::kEnvironment, "database file not found: " + db_path.string());
    }
    if (sqlite3_open_v2(db_path.c_str(), &db_, SQLITE_OPEN_READONLY, nullptr) != SQLITE_OK) {
      std::string msg = db_ ? sqlite3_errmsg(db_) : "out of memory";
      sqlite3_close(db_);
      db_ = nullptr;
      throw Error(ErrorCode::kEnvironment, "cannot open " + db_path.string() + ": " + msg);
    }
  }
  ~Connection() { sqlite3_close(db_); }
  Connection(const Connection&) = delete;
  Connection& operator=(const Connection&) = delete;

  sqlite3* get() const { return db_; }

 private:
  sqlite3* db_ = nullptr;
};

class Statement {
 public:
  Statement() = default;
  ~Statement() { sqlite3_finalize(stmt_); }
  Statement(const Statement&) = delete;
  Statement& operator=(const Statement&) = delete;
  sqlite3_stmt** out() { return &stmt_; }
  sqlite3_stmt* get() const { return stmt_; }

 private:
  sqlite3_stmt* stmt_ = nullptr;
};

inline Cell read_cell(sqlite3_stmt* stmt, int col, bool round_reals) {
  switch (sqlite3_column_type(stmt, col)) {
    case SQLITE_NULL: return std::monostate{};
    case SQLITE_INTEGER: return static_cast<std::int64_t>(sqlite3_column_int64(stmt, col));
    case SQLITE_FLOAT: {
      const double v = sqlite3_column_double(stmt, col);
      return round_reals ? round_15(v) : v;
    }
    case SQLITE_BLOB: {
      const auto* data = static_cast<const unsigned char*>(sqlite3_column_blob(stmt, col));
      const int len = sqlite3_column_bytes(stmt, col);
      static constexpr char kHex[] = "0123456789abcdef";
      Blob b;
      b.hex.reserve(static_cast<std::size_t>(len) * 2);
      for (int i = 0; i < len; ++i) {
        b.hex.push_back(kHex[data[i] >> 4]);
        b.hex.push_back(kHex[data[i] & 0x0f]);
      }
      return b;
    }
    default: {
      const auto* txt = reinterpret_cast<const char*>(sqlite3_column_text(stmt, col));
      const int len = sqlite3_column_bytes(stmt, col);
      return std::string(txt == nullptr ? "" : txt, static_cast<std::size_t>(len));
    }
  }
}

}  // namespace detail

/// Runs one read-only statement. SQL problems become ExecError; a missing
/// or unreadable database file throws kEnvironment.
inline ExecOutcome execute(const std::filesystem::path& db_path, std::string_view sql_text,
                           const ExecutorOptions& opts = {}) {
  detail::Connection conn(db_path);
  if (auto kw = detail::mutation_keyword(sql_text); !kw.empty()) {
    return ExecError{"rejected mutating statement (" + kw + ")"};
  }

  detail::Statement stmt;
  const char* tail = nullptr;
  const std::string owned(sql_text);
  if (sqlite3_prepare_v2(conn.get(), owned.c_str(), static_cast<int>(owned.size()), stmt.out(),
                         &tail) != SQLITE_OK) {
    return ExecError{sqlite3_errmsg(conn.get())};
  }
  if (stmt.get() == nullptr) return ExecError{"no SQL statement"};
  if (!sqlite3_stmt_readonly(stmt.get())) return ExecError{"rejected mutating statement"};
  if (!detail::only_trailing_noise(tail)) return ExecError{"multiple statements are not allowed"};

  using Clock = std::chrono::steady_clock;
  struct Deadline {
    Clock::time_point at;
    bool fired = false;
  } deadline{Clock::now() + std::chrono::milliseconds(opts.timeout_ms)};
  sqlite3_progress_handler(
      conn.get(), 1000,
      [](void* p) -> int {
        auto* d = static_cast<Deadline*>(p);
        if (Clock::now() >= d->at) {
          d->fired = true;
          return 1;
        }
        return 0;
      },
      &deadline);

  ResultSet rows;
  const int ncol = sqlite3_column_count(stmt.get());
  for (;;) {
    const int rc = sqlite3_step(stmt.get());
    if (rc == SQLITE_ROW) {
      Row row;
      row.reserve(static_cast<std::size_t>(ncol));
      for (int c = 0; c < ncol; ++c) row.push_back(detail::read_cell(stmt.get(), c, opts.round_reals));
      rows.insert(std::move(row));
      continue;
    }
    if (rc == SQLITE_DONE) break;
    if (deadline.fired || rc == SQLITE_INTERRUPT) return ExecTimeout{};
    return ExecError{sqlite3_errmsg(conn.get())};
  }
  return rows;
}

inline ExecOutcome execute(const std::filesystem::path& db_path, std::string_view sql_text,
                           std::int64_t timeout_ms) {
  return execute(db_path, sql_text, ExecutorOptions{timeout_ms, false});
}

/// Execution-accuracy predicate: both sides execute and yield equal row sets.
/// A failing gold query is a dataset problem and throws kGoldError.
inline bool ex_match(std::string_view pred_sql, std::string_view gold_sql,
                     const std::filesystem::path& db_path, const ExecutorOptions& opts = {}) {
  ExecOutcome gold = execute(db_path, gold_sql, opts);
  if (!is_ok(gold)) {
    throw Error(ErrorCode::kGoldError, "gold SQL failed (" + describe(gold) + "): " +
                                           std::string(gold_sql.substr(0, 200)));
  }
  ExecOutcome pred = execute(db_path, pred_sql, opts);
  return is_ok(pred) && std::get<ResultSet>(pred) == std::get<ResultSet>(gold);
}

inline bool ex_match(std::string_view pred_sql, std::string_view gold_sql,
                     const std::filesystem::path& db_path, std::int64_t timeout_ms) {
  return ex_match(pred_sql, gold_sql, db_path, ExecutorOptions{timeout_ms, false});
}

}  // namespace tiersql::sql
