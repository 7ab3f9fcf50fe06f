#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "tiersql/core.hpp"
#include "tiersql/sqlexec.hpp"

namespace tiersql {

enum class DatasetFormat { kBird, kSpider };

inline DatasetFormat parse_dataset_format(std::string_view s) {
  if (text::iequals(s, "bird")) return DatasetFormat::kBird;
  if (text::iequals(s, "spider")) return DatasetFormat::kSpider;
  throw Error(ErrorCode::kConfig, "unknown dataset format '" + std::string(s) + "'");
}

struct DatasetSpec {
  std::string name;
  std::filesystem::path questions_file;
  std::filesystem::path databases_dir;
  DatasetFormat format = DatasetFormat::kBird;
  // Read <db>/database_description/<table>.csv when present.
  bool load_descriptions = true;
  int sample_values = 3;
};

// ---------------------------------------------------------------------------
// Question files.

namespace detail {

inline std::string record_string(const nlohmann::json& r, const char* key, const std::string& where) {
  if (!r.contains(key) || !r[key].is_string()) {
    throw Error(ErrorCode::kDataset, where + ": missing string field '" + key + "'");
  }
  return r[key].get<std::string>();
}

inline NLQuery to_query(const nlohmann::json& r, DatasetFormat fmt, std::size_t index,
                        const std::string& where) {
  if (!r.is_object()) throw Error(ErrorCode::kDataset, where + ": record is not an object");
  NLQuery q;
  q.question = record_string(r, "question", where);
  q.db_id = record_string(r, "db_id", where);
  if (fmt == DatasetFormat::kBird) {
    q.hint = r.contains("evidence") && r["evidence"].is_string() ? r["evidence"].get<std::string>() : "";
    if (r.contains("SQL") && r["SQL"].is_string()) q.gold_sql = r["SQL"].get<std::string>();
    if (r.contains("difficulty") && r["difficulty"].is_string()) {
      q.difficulty = parse_difficulty(r["difficulty"].get<std::string>());
      if (!q.difficulty) {
        throw Error(ErrorCode::kDataset, where + ": unknown difficulty '" +
                                             r["difficulty"].get<std::string>() + "'");
      }
    }
    if (r.contains("question_id")) {
      const auto& id = r["question_id"];
      q.id = id.is_string() ? id.get<std::string>() : id.dump();
    }
  } else {
    if (r.contains("query") && r["query"].is_string()) q.gold_sql = r["query"].get<std::string>();
  }
  if (q.id.empty()) q.id = std::to_string(index);
  return q;
}

inline std::size_t line_of_offset(std::string_view text, std::size_t offset) {
  offset = std::min(offset, text.size());
  return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(offset), '\n'));
}

}  // namespace detail

/// Parses a JSON array or JSONL question file. `source` names the file in
/// error messages.
inline std::vector<NLQuery> parse_questions(std::string_view content, DatasetFormat fmt,
                                            const std::string& source) {
  std::vector<NLQuery> out;
  const auto body = text::trim(content);
  if (!body.empty() && body.front() == '[') {
    nlohmann::json arr;
    try {
      arr = nlohmann::json::parse(content);
    } catch (const nlohmann::json::parse_error& e) {
      throw Error(ErrorCode::kDataset, source + ":" + std::to_string(detail::line_of_offset(content, e.byte)) +
                                           ": malformed JSON");
    }
    for (std::size_t i = 0; i < arr.size(); ++i) {
      out.push_back(detail::to_query(arr[i], fmt, i, source + ": record " + std::to_string(i + 1)));
    }
  } else {
    std::size_t line_no = 0, index = 0, pos = 0;
    while (pos <= content.size()) {
      std::size_t end = content.find('\n', pos);
      if (end == std::string_view::npos) end = content.size();
      const auto line = content.substr(pos, end - pos);
      ++line_no;
      pos = end + 1;
      if (text::trim(line).empty()) continue;
      const std::string where = source + ":" + std::to_string(line_no);
      auto j = nlohmann::json::parse(line, nullptr, false);
      if (j.is_discarded()) throw Error(ErrorCode::kDataset, where + ": malformed JSON");
      out.push_back(detail::to_query(j, fmt, index++, where));
    }
  }
  std::set<std::string> seen;
  for (const auto& q : out) {
    if (!seen.insert(q.id).second) throw Error(ErrorCode::kDataset, source + ": duplicate query id " + q.id);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Schema introspection.

namespace detail {

inline std::string quote_ident(std::string_view name) {
  std::string out = "\"";
  for (char c : name) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

inline std::vector<std::vector<std::string>> query_text(sqlite3* db, const std::string& sql) {
  sql::detail::Statement stmt;
  if (sqlite3_prepare_v2(db, sql.c_str(), -1, stmt.out(), nullptr) != SQLITE_OK) {
    throw Error(ErrorCode::kDataset, std::string("introspection failed: ") + sqlite3_errmsg(db));
  }
  std::vector<std::vector<std::string>> rows;
  const int ncol = sqlite3_column_count(stmt.get());
  int rc;
  while ((rc = sqlite3_step(stmt.get())) == SQLITE_ROW) {
    std::vector<std::string> row;
    for (int c = 0; c < ncol; ++c) {
      const auto* t = reinterpret_cast<const char*>(sqlite3_column_text(stmt.get(), c));
      row.emplace_back(t == nullptr ? "" : t);
    }
    rows.push_back(std::move(row));
  }
  if (rc != SQLITE_DONE) {
    throw Error(ErrorCode::kDataset, std::string("introspection failed: ") + sqlite3_errmsg(db));
  }
  return rows;
}

// RFC 4180 style rows; quoted fields may span lines.
inline std::vector<std::vector<std::string>> parse_csv(std::string_view s) {
  if (s.starts_with("\xEF\xBB\xBF")) s.remove_prefix(3);
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false, any = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const char c = s[i];
    if (quoted) {
      if (c == '"' && i + 1 < s.size() && s[i + 1] == '"') {
        field += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        field += c;
      }
      continue;
    }
    if (c == '"') {
      quoted = true;
      any = true;
    } else if (c == ',') {
      row.push_back(std::move(field));
      field.clear();
      any = true;
    } else if (c == '\n' || c == '\r') {
      if (c == '\r' && i + 1 < s.size() && s[i + 1] == '\n') ++i;
      if (any || !field.empty()) {
        row.push_back(std::move(field));
        rows.push_back(std::move(row));
      }
      row.clear();
      field.clear();
      any = false;
    } else {
      field += c;
      any = true;
    }
  }
  if (any || !field.empty()) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Column descriptions from a database_description CSV, keyed by lowercased
// original column name.
inline std::map<std::string, std::string> read_descriptions(const std::filesystem::path& csv) {
  std::map<std::string, std::string> out;
  const auto rows = parse_csv(read_file(csv));
  if (rows.empty()) return out;
  int name_col = -1, desc_col = -1;
  for (std::size_t i = 0; i < rows[0].size(); ++i) {
    const auto h = text::to_lower(text::trim(rows[0][i]));
    if (h == "original_column_name") name_col = static_cast<int>(i);
    if (h == "column_description") desc_col = static_cast<int>(i);
  }
  if (name_col < 0 || desc_col < 0) return out;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.size() <= static_cast<std::size_t>(std::max(name_col, desc_col))) continue;
    const auto desc = text::trim(row[static_cast<std::size_t>(desc_col)]);
    if (!desc.empty()) out[text::to_lower(text::trim(row[static_cast<std::size_t>(name_col)]))] = std::string(desc);
  }
  return out;
}

}  // namespace detail

inline DatabaseSchema introspect_schema(const std::filesystem::path& db_path, int sample_values = 3,
                                        bool load_descriptions = true) {
  using detail::query_text;
  using detail::quote_ident;
  sql::detail::Connection conn(db_path);
  sqlite3* db = conn.get();
  DatabaseSchema schema;
  const auto tables = query_text(
      db, "SELECT name FROM sqlite_master WHERE type = 'table' AND name NOT LIKE 'sqlite\\_%' ESCAPE '\\'");
  const auto desc_dir = db_path.parent_path() / "database_description";
  for (const auto& trow : tables) {
    TableDef t;
    t.name = trow[0];
    // cid, name, type, notnull, dflt_value, pk
    std::vector<std::pair<int, std::string>> pk;
    for (const auto& c : query_text(db, "PRAGMA table_info(" + quote_ident(t.name) + ")")) {
      t.columns.push_back({c[1], c[2], std::nullopt, {}});
      const int pk_pos = std::stoi(c[5]);
      if (pk_pos > 0) pk.emplace_back(pk_pos, c[1]);
    }
    std::sort(pk.begin(), pk.end());
    for (auto& [_, name] : pk) t.primary_key.push_back(name);
    // id, seq, table, from, to, ...
    for (const auto& f : query_text(db, "PRAGMA foreign_key_list(" + quote_ident(t.name) + ")")) {
      t.foreign_keys.push_back({f[3], f[2], f[4]});
    }
    if (sample_values > 0) {
      for (auto& col : t.columns) {
        const auto rows = query_text(
            db, "SELECT DISTINCT " + quote_ident(col.name) + " FROM " + quote_ident(t.name) + " WHERE " +
                    quote_ident(col.name) + " IS NOT NULL AND typeof(" + quote_ident(col.name) +
                    ") != 'blob' LIMIT " + std::to_string(sample_values));
        for (const auto& r : rows) {
          std::string v = r[0];
          if (v.size() > 60) v = v.substr(0, 57) + "...";
          col.sample_values.push_back(std::move(v));
        }
      }
    }
    if (load_descriptions) {
      const auto csv = desc_dir / (t.name + ".csv");
      if (std::filesystem::exists(csv)) {
        const auto desc = detail::read_descriptions(csv);
        for (auto& col : t.columns) {
          if (auto it = desc.find(text::to_lower(col.name)); it != desc.end()) col.description = it->second;
        }
      }
    }
    schema.tables.push_back(std::move(t));
  }
  schema.validate();
  return schema;
}

/// db_id -> schema and database file.
class SchemaRegistry {
 public:
  SchemaRegistry() = default;
  explicit SchemaRegistry(std::filesystem::path databases_dir) : dir_(std::move(databases_dir)) {}

  std::filesystem::path db_path(const std::string& db_id) const {
    return dir_ / db_id / (db_id + ".sqlite");
  }

  void add(const std::string& db_id, DatabaseSchema schema) { schemas_[db_id] = std::move(schema); }

  const DatabaseSchema& schema(const std::string& db_id) const {
    const auto it = schemas_.find(db_id);
    if (it == schemas_.end()) throw Error(ErrorCode::kDataset, "unknown db_id " + db_id);
    return it->second;
  }

  bool contains(const std::string& db_id) const { return schemas_.contains(db_id); }
  std::size_t size() const { return schemas_.size(); }
  const std::filesystem::path& databases_dir() const { return dir_; }

 private:
  std::filesystem::path dir_;
  std::map<std::string, DatabaseSchema> schemas_;
};

struct Dataset {
  std::vector<NLQuery> queries;
  SchemaRegistry registry;
};

inline Dataset load_dataset(const DatasetSpec& spec) {
  if (!std::filesystem::exists(spec.questions_file)) {
    throw Error(ErrorCode::kDataset, "questions file not found: " + spec.questions_file.string());
  }
  Dataset ds;
  ds.queries = parse_questions(detail::read_file(spec.questions_file), spec.format,
                               spec.questions_file.filename().string());
  ds.registry = SchemaRegistry(spec.databases_dir);
  for (const auto& q : ds.queries) {
    if (ds.registry.contains(q.db_id)) continue;
    const auto path = ds.registry.db_path(q.db_id);
    if (!std::filesystem::exists(path)) {
      throw Error(ErrorCode::kDataset, "query " + q.id + ": db_id '" + q.db_id +
                                           "' does not resolve to " + path.string());
    }
    ds.registry.add(q.db_id, introspect_schema(path, spec.sample_values, spec.load_descriptions));
  }
  return ds;
}

}  // namespace tiersql
