#pragma once

#include <filesystem>
#include <regex>
#include <string>
#include <string_view>
#include <vector>

#include "tiersql/core.hpp"
#include "tiersql/gateway.hpp"
#include "tiersql/prompts.hpp"
#include "tiersql/schema_linker.hpp"
#include "tiersql/sqlexec.hpp"

namespace tiersql {

struct SubQuestion {
  int index = 1;
  std::string text;

  bool operator==(const SubQuestion&) const = default;
};

struct SynthesizedExample {
  std::string question;
  std::string sql;

  bool operator==(const SynthesizedExample&) const = default;
};

struct GenerationResult {
  std::string sql;
  TokenUsage usage{0, 0, Phase::kGeneration, false};
  std::vector<StepRecord> steps;
};

/// A pipeline error together with the steps (and spend) completed before it.
class GenerationFailure : public Error {
 public:
  GenerationFailure(const Error& cause, GenerationResult partial)
      : Error(cause.code(), cause.detail()), partial_(std::move(partial)) {}

  const GenerationResult& partial() const { return partial_; }

 private:
  GenerationResult partial_;
};

struct ExtractedSql {
  std::string sql;
  bool fenced = true;
};

/// Contents of the last ```sql block, trimmed; the whole completion when no
/// block is present. Throws kEmptySql when nothing is left.
inline ExtractedSql extract_sql(std::string_view completion) {
  const auto blocks = fenced_blocks(completion, "sql");
  ExtractedSql out;
  if (!blocks.empty()) {
    out.sql = std::string(text::trim(blocks.back()));
  } else {
    out.sql = std::string(text::trim(completion));
    out.fenced = false;
  }
  if (out.sql.empty()) throw Error(ErrorCode::kEmptySql, "completion contains no SQL");
  return out;
}

/// "Sub-question N: <<text>>" lines in order of appearance, reindexed from 1
/// and capped at `cap`. Empty when nothing matches.
inline std::vector<SubQuestion> parse_sub_questions(std::string_view completion, std::size_t cap) {
  static const std::regex kLine(R"(Sub-question\s*\d+\s*:\s*<<([\s\S]*?)>>)",
                                std::regex::ECMAScript | std::regex::icase);
  std::vector<SubQuestion> out;
  const std::string s(completion);
  for (auto it = std::sregex_iterator(s.begin(), s.end(), kLine); it != std::sregex_iterator();
       ++it) {
    if (out.size() >= cap) break;
    std::string body(text::trim((*it)[1].str()));
    if (body.empty()) continue;
    out.push_back({static_cast<int>(out.size()) + 1, std::move(body)});
  }
  return out;
}

namespace detail {

inline std::string strip_value(std::string_view v) {
  v = text::trim(v);
  while (!v.empty() && (v.back() == ',' || v.back() == '}' || v.back() == ']' || v.back() == '{' || v.back() == '[')) {
    v.remove_suffix(1);
    v = text::trim(v);
  }
  if (v.size() >= 2 && v.front() == '"' && v.back() == '"') {
    v = v.substr(1, v.size() - 2);
  } else if (!v.empty() && v.front() == '"') {
    v.remove_prefix(1);
  }
  return std::string(text::trim(v));
}

}  // namespace detail

/// Alternating "Question": "..." / "SQL": "..." pairs in order of appearance,
/// at most `k` of them.
inline std::vector<SynthesizedExample> parse_synthesized_examples(std::string_view completion,
                                                                  std::size_t k) {
  static const std::regex kMarker(R"re("(question|sql)"\s*:)re",
                                  std::regex::ECMAScript | std::regex::icase);
  struct Marker {
    bool is_question;
    std::size_t begin;
    std::size_t end;
  };
  const std::string s(completion);
  std::vector<Marker> markers;
  for (auto it = std::sregex_iterator(s.begin(), s.end(), kMarker); it != std::sregex_iterator();
       ++it) {
    const auto pos = static_cast<std::size_t>(it->position());
    markers.push_back({text::iequals((*it)[1].str(), "question"), pos,
                       pos + static_cast<std::size_t>(it->length())});
  }
  std::vector<SynthesizedExample> out;
  for (std::size_t i = 0; i + 1 < markers.size() && out.size() < k; ++i) {
    if (!markers[i].is_question || markers[i + 1].is_question) continue;
    const std::size_t q_end = markers[i + 1].begin;
    const std::size_t sql_end = i + 2 < markers.size() ? markers[i + 2].begin : s.size();
    SynthesizedExample ex{
        detail::strip_value(std::string_view(s).substr(markers[i].end, q_end - markers[i].end)),
        detail::strip_value(
            std::string_view(s).substr(markers[i + 1].end, sql_end - markers[i + 1].end))};
    if (!ex.question.empty() && !ex.sql.empty()) out.push_back(std::move(ex));
    ++i;
  }
  return out;
}

inline std::string render_examples(const std::vector<SynthesizedExample>& examples) {
  std::string out;
  for (const auto& ex : examples) {
    if (!out.empty()) out += "\n\n";
    out += "\"Question\": \"" + ex.question + "\"\n\"SQL\": \"" + ex.sql + "\"";
  }
  return out;
}

struct SubQuestionSql {
  SubQuestion sub;
  std::string sql;
};

inline std::string render_sub_sqls(const std::vector<SubQuestionSql>& pairs) {
  std::string out;
  for (const auto& p : pairs) {
    if (!out.empty()) out += "\n\n";
    out += "Sub-question " + std::to_string(p.sub.index) + ": " + p.sub.text + "\nSQL query:\n```sql\n" +
           p.sql + "\n```";
  }
  return out;
}

// ---------------------------------------------------------------------------

struct PipelineOptions {
  std::string model = "gpt-4o-mini-2024-07-18";
  double temperature = 0.0;
  int synth_k = 3;
  int refine_rounds = 1;
  std::size_t max_sub_questions = 8;
  // Re-synthesize examples before every conquer step instead of once per query.
  bool synth_per_subquestion = false;
  sql::ExecutorOptions executor;
};

/// Everything a pipeline needs about one query.
struct GenerationInput {
  const NLQuery& query;
  const DatabaseSchema& schema;
  const LinkedSchema& linked;
  std::filesystem::path db_path;
};

/// Tier dispatch seam used by the labeler and the benchmark runner.
class TierPipelines {
 public:
  virtual ~TierPipelines() = default;
  virtual GenerationResult generate(Tier tier, const GenerationInput& in) = 0;
};

/// The three generators sharing one gateway.
class Pipelines : public TierPipelines {
 public:
  Pipelines(const Gateway& gw, PipelineOptions opts) : gw_(gw), opts_(std::move(opts)) {
    if (opts_.refine_rounds < 0 || opts_.refine_rounds > 3) {
      throw Error(ErrorCode::kConfig, "refine_rounds must be within 0..3");
    }
    if (opts_.max_sub_questions == 0) throw Error(ErrorCode::kConfig, "max_sub_questions must be >= 1");
  }

  const PipelineOptions& options() const { return opts_; }

  GenerationResult generate(Tier tier, const GenerationInput& in) override {
    switch (tier) {
      case Tier::kBasic: return generate_basic(in);
      case Tier::kIntermediate: return generate_intermediate(in);
      case Tier::kAdvanced: return generate_advanced(in, opts_.synth_k);
    }
    throw Error(ErrorCode::kPrecondition, "unknown tier");
  }

  GenerationResult generate_basic(const GenerationInput& in) const {
    require_linked(in);
    GenerationResult res;
    guarded(res, [&] {
      const std::string prompt = text::fill_template(
          prompts::kBasicGeneration,
          {{"schema", schema_text(in)}, {"evidence", in.query.hint}, {"query", in.query.question}});
      const std::string completion = call(res, "generate", prompt);
      res.sql = extract_into(res, completion);
    });
    return res;
  }

  GenerationResult generate_intermediate(const GenerationInput& in) const {
    require_linked(in);
    GenerationResult res;
    guarded(res, [&] { divide_and_conquer(in, std::nullopt, res); });
    return res;
  }

  GenerationResult generate_advanced(const GenerationInput& in, int k) const {
    if (k < 1) throw Error(ErrorCode::kPrecondition, "synthesized example count must be >= 1");
    require_linked(in);
    GenerationResult res;
    guarded(res, [&] { divide_and_conquer(in, k, res); });
    return res;
  }

  std::vector<SubQuestion> divide(const GenerationInput& in, GenerationResult& res) const {
    const std::string prompt = text::fill_template(
        prompts::kDivide, {{"example_database_schema", prompts::kDivideExampleSchema},
                           {"example_question", prompts::kDivideExampleQuestion},
                           {"sub question 1", prompts::kDivideExampleSub1},
                           {"sub question 2", prompts::kDivideExampleSub2},
                           {"sub question 3", prompts::kDivideExampleSub3},
                           {"schema", schema_text(in)},
                           {"query", in.query.question},
                           {"evidence", in.query.hint}});
    const std::string completion = call(res, "divide", prompt);
    auto subs = parse_sub_questions(completion, opts_.max_sub_questions);
    if (subs.empty()) {
      res.steps.back().flag = "degenerate";
      subs.push_back({1, in.query.question});
    }
    return subs;
  }

  std::string conquer(const SubQuestion& sub, const GenerationInput& in,
                      const std::vector<SynthesizedExample>& examples, GenerationResult& res) const {
    const std::string rendered = render_examples(examples);
    const std::string prompt = text::fill_template(prompts::kConquer, {{"schema", schema_text(in)},
                                                                       {"examples", rendered},
                                                                       {"query", sub.text},
                                                                       {"evidence", in.query.hint}});
    const std::string completion = call(res, "conquer_" + std::to_string(sub.index), prompt);
    return extract_into(res, completion);
  }

  std::string assemble(const GenerationInput& in, const std::vector<SubQuestionSql>& pairs,
                       GenerationResult& res) const {
    if (pairs.empty()) throw Error(ErrorCode::kPrecondition, "assemble needs at least one sub-question");
    const std::string prompt = text::fill_template(prompts::kAssemble,
                                                   {{"schema", schema_text(in)},
                                                    {"query", in.query.question},
                                                    {"evidence", in.query.hint},
                                                    {"subs", render_sub_sqls(pairs)}});
    const std::string completion = call(res, "assemble", prompt);
    return extract_into(res, completion);
  }

  /// Returns `sql` unchanged when it executes with at least one row; otherwise
  /// issues corrective rounds and returns the last attempt regardless.
  std::string refine(const std::string& sql, const GenerationInput& in, GenerationResult& res) const {
    std::string current = sql;
    for (int round = 0; round < opts_.refine_rounds; ++round) {
      const sql::ExecOutcome outcome = sql::execute(in.db_path, current, opts_.executor);
      std::string failure;
      std::string reason;
      if (const auto* rows = std::get_if<sql::ResultSet>(&outcome)) {
        if (!rows->empty()) return current;
        failure = "returned an empty result";
        reason = "empty result";
      } else if (const auto* err = std::get_if<sql::ExecError>(&outcome)) {
        failure = "failed with an error";
        reason = err->message;
      } else {
        failure = "timed out";
        reason = "execution timed out";
      }
      const std::string prompt = text::fill_template(prompts::kRefine, {{"failure", failure},
                                                                        {"schema", schema_text(in)},
                                                                        {"query", in.query.question},
                                                                        {"evidence", in.query.hint},
                                                                        {"sql", current},
                                                                        {"reason", reason}});
      const std::string completion = call(res, "refine_" + std::to_string(round + 1), prompt);
      try {
        current = extract_into(res, completion);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::kEmptySql) throw;
        res.steps.back().flag = "empty";
        return current;
      }
    }
    return current;
  }

  std::vector<SynthesizedExample> synthesize_examples(const GenerationInput& in, int k,
                                                      GenerationResult& res) const {
    if (k < 1) throw Error(ErrorCode::kPrecondition, "synthesized example count must be >= 1");
    const std::string k_text = std::to_string(k);
    const std::string prompt = text::fill_template(
        prompts::kOnlineSynthesis, {{"k", k_text}, {"TARGET_DATABASE_SCHEMA", schema_text(in)}});
    const std::string completion = call(res, "synthesize", prompt);
    auto examples = parse_synthesized_examples(completion, static_cast<std::size_t>(k));
    if (examples.empty()) {
      res.steps.back().flag = "degenerate";
    } else if (examples.size() < static_cast<std::size_t>(k)) {
      res.steps.back().flag = "short";
    }
    return examples;
  }

 private:
  static void require_linked(const GenerationInput& in) {
    if (in.linked.entries.empty()) throw Error(ErrorCode::kPrecondition, "linked schema is empty");
  }

  std::string schema_text(const GenerationInput& in) const {
    return prompts::render_schema(in.schema, &in.linked,
                                  {.include_descriptions = true,
                                   .max_sample_values = 3,
                                   .include_foreign_keys = true});
  }

  template <typename Fn>
  static void guarded(GenerationResult& res, Fn&& fn) {
    try {
      fn();
    } catch (const GenerationFailure&) {
      throw;
    } catch (const Error& e) {
      throw GenerationFailure(e, res);
    }
  }

  void divide_and_conquer(const GenerationInput& in, std::optional<int> synth_k,
                          GenerationResult& res) const {
    const auto subs = divide(in, res);
    std::vector<SynthesizedExample> examples;
    if (synth_k && !opts_.synth_per_subquestion) examples = synthesize_examples(in, *synth_k, res);

    std::vector<SubQuestionSql> pairs;
    for (const auto& sub : subs) {
      if (synth_k && opts_.synth_per_subquestion) examples = synthesize_examples(in, *synth_k, res);
      pairs.push_back({sub, conquer(sub, in, examples, res)});
    }
    const std::string assembled = assemble(in, pairs, res);
    res.sql = refine(assembled, in, res);
  }

  std::string call(GenerationResult& res, const std::string& step, const std::string& prompt) const {
    ChatRequest req{opts_.model, prompt, opts_.temperature, std::nullopt};
    ChatResponse resp = gw_.complete(req);
    resp.usage.phase = Phase::kGeneration;
    res.usage = merge_usage(res.usage, resp.usage);
    res.steps.push_back({step, canonical_key(req), "", resp.usage});
    return resp.text;
  }

  static std::string extract_into(GenerationResult& res, const std::string& completion) {
    ExtractedSql ex = extract_sql(completion);
    if (!ex.fenced && !res.steps.empty() && res.steps.back().flag.empty()) {
      res.steps.back().flag = "unfenced";
    }
    return std::move(ex.sql);
  }

  const Gateway& gw_;
  PipelineOptions opts_;
};

}  // namespace tiersql
