#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tiersql/core.hpp"
#include "tiersql/gateway.hpp"
#include "tiersql/prompts.hpp"

namespace tiersql {

struct LinkResponse {
  std::string raw_text;
  std::optional<std::vector<LinkedTable>> parsed;
};

inline std::string build_link_prompt(const DatabaseSchema& schema, const NLQuery& q) {
  if (schema.tables.empty()) throw Error(ErrorCode::kPrecondition, "schema has no tables");
  const std::string schema_str =
      prompts::render_schema(schema, nullptr, {.include_descriptions = true,
                                               .max_sample_values = 3,
                                               .include_foreign_keys = false});
  return text::fill_template(prompts::kSchemaLinking,
                             {{"schema_str", schema_str}, {"query", q.question}, {"evidence", q.hint}});
}

/// Bodies of every ```<lang> fenced block, in order of appearance. The
/// language tag is matched case-insensitively.
inline std::vector<std::string_view> fenced_blocks(std::string_view text, std::string_view lang) {
  std::vector<std::string_view> out;
  const std::string opener = "```";
  std::size_t pos = 0;
  while ((pos = text.find(opener, pos)) != std::string_view::npos) {
    std::size_t tag_start = pos + opener.size();
    if (text.size() - tag_start < lang.size() ||
        !text::iequals(text.substr(tag_start, lang.size()), lang)) {
      pos = tag_start;
      continue;
    }
    std::size_t body_start = tag_start + lang.size();
    // The tag must end the token: ```sqlite is not a ```sql block.
    if (body_start < text.size() && std::isalnum(static_cast<unsigned char>(text[body_start]))) {
      pos = body_start;
      continue;
    }
    const std::size_t close = text.find(opener, body_start);
    if (close == std::string_view::npos) break;
    out.push_back(text.substr(body_start, close - body_start));
    pos = close + opener.size();
  }
  return out;
}

/// Valid (table, columns) selections from a link completion, or nullopt when
/// no fenced JSON block parses into the expected shape.
inline std::optional<std::vector<LinkedTable>> parse_link_json(std::string_view completion) {
  const auto blocks = fenced_blocks(completion, "json");
  for (auto it = blocks.rbegin(); it != blocks.rend(); ++it) {
    auto j = nlohmann::json::parse(*it, nullptr, false);
    if (j.is_discarded() || !j.is_object()) continue;
    auto tables = j.find("tables");
    if (tables == j.end() || !tables->is_array()) continue;
    std::vector<LinkedTable> out;
    for (const auto& t : *tables) {
      if (!t.is_object() || !t.contains("table") || !t["table"].is_string()) continue;
      LinkedTable lt{t["table"].get<std::string>(), {}};
      if (t.contains("columns") && t["columns"].is_array()) {
        for (const auto& c : t["columns"]) {
          if (c.is_string()) lt.columns.push_back(c.get<std::string>());
        }
      }
      out.push_back(std::move(lt));
    }
    return out;
  }
  return std::nullopt;
}

/// Keeps only selections that exist in `schema` (case-insensitive, rewritten
/// to canonical casing, duplicates merged). Falls back to the full schema when
/// nothing valid remains.
inline LinkedSchema parse_link_response(std::string_view completion, const DatabaseSchema& schema) {
  LinkedSchema linked;
  linked.provenance = LinkProvenance::kModel;
  if (auto parsed = parse_link_json(completion)) {
    for (const auto& sel : *parsed) {
      const TableDef* table = schema.find_table(sel.table);
      if (table == nullptr) continue;
      LinkedTable* entry = nullptr;
      for (auto& e : linked.entries) {
        if (e.table == table->name) entry = &e;
      }
      for (const auto& col_name : sel.columns) {
        const ColumnDef* col = table->find_column(col_name);
        if (col == nullptr) continue;
        if (entry == nullptr) {
          linked.entries.push_back({table->name, {}});
          entry = &linked.entries.back();
        }
        if (std::find(entry->columns.begin(), entry->columns.end(), col->name) ==
            entry->columns.end()) {
          entry->columns.push_back(col->name);
        }
      }
    }
  }
  if (linked.entries.empty()) return LinkedSchema::full(schema);
  return linked;
}

/// Serializes a linked schema as the fenced JSON block the link prompt asks for.
inline std::string link_json_block(const LinkedSchema& linked) {
  nlohmann::json tables = nlohmann::json::array();
  for (const auto& e : linked.entries) tables.push_back({{"table", e.table}, {"columns", e.columns}});
  return "```json\n" + nlohmann::json{{"tables", tables}}.dump(4) + "\n```";
}

struct LinkerOptions {
  std::string model = "gpt-4o-mini-2024-07-18";
  double temperature = 0.0;
  // Extra calls issued when the completion has no parseable JSON block.
  int malformed_retries = 0;
};

struct LinkResult {
  LinkedSchema linked;
  TokenUsage usage{0, 0, Phase::kLinking, false};
  std::vector<StepRecord> steps;
  std::string raw_text;
};

inline constexpr std::string_view kLinkRetrySuffix =
    "\n\nReturn only the JSON object, wrapped in a code block using ```json```.";

inline LinkResult link(const NLQuery& q, const DatabaseSchema& schema, const Gateway& gw,
                       const LinkerOptions& opts = {}) {
  LinkResult result;
  std::string prompt = build_link_prompt(schema, q);
  for (int attempt = 0; attempt <= opts.malformed_retries; ++attempt) {
    ChatRequest req{opts.model, prompt, opts.temperature, std::nullopt};
    ChatResponse resp = gw.complete(req);
    resp.usage.phase = Phase::kLinking;
    result.usage = merge_usage(result.usage, resp.usage);
    result.raw_text = resp.text;
    const bool parsed = parse_link_json(resp.text).has_value();
    result.steps.push_back({attempt == 0 ? "link" : "link_retry", canonical_key(req),
                            parsed ? "" : "malformed", resp.usage});
    if (parsed) break;
    prompt += kLinkRetrySuffix;
  }
  result.linked = parse_link_response(result.raw_text, schema);
  return result;
}

}  // namespace tiersql
