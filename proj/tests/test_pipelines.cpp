#include <gtest/gtest.h>

#include "support/test_util.hpp"
#include "tiersql/config.hpp"
#include "tiersql/dataset.hpp"
#include "tiersql/pipelines.hpp"
#include "tiersql/schema_linker.hpp"

using namespace tiersql;
using namespace tiersql::testing;

namespace {

bool has(const std::string& s, std::string_view needle) { return s.find(needle) != std::string::npos; }

std::string sql_block(const std::string& s) { return "```sql\n" + s + "\n```"; }

// Answers each prompt kind from a small table. Usage is one token per
// prompt character so cost comparisons follow prompt size.
struct StepScript {
  std::string basic = sql_block("SELECT name FROM pets");
  std::string divide = "Sub-question 1: <<Which pets exist?>>\n\nSub-question 2: <<What are their names?>>";
  std::string conquer = sql_block("SELECT name FROM pets");
  std::string assemble = sql_block("SELECT name FROM pets");
  std::string synth =
      "\"Question\": \"How many pets?\"\n\"SQL\": \"SELECT count(*) FROM pets\"\n\n"
      "\"Question\": \"Oldest pet?\"\n\"SQL\": \"SELECT name FROM pets ORDER BY age DESC LIMIT 1\"";
  std::string refine = sql_block("SELECT name FROM pets WHERE age > 0");
};

std::shared_ptr<FnProvider> scripted(const StepScript& s) {
  return std::make_shared<FnProvider>([s](const ChatRequest& r) {
    const std::string& p = r.prompt;
    std::string out;
    if (has(p, "Correct the SQL query so that")) {
      out = s.refine;
    } else if (has(p, "assemble the final SQL")) {
      out = s.assemble;
    } else if (has(p, "1. Parse user questions")) {
      out = s.conquer;
    } else if (has(p, "decompose the question into sub-questions")) {
      out = s.divide;
    } else if (has(p, "Your job is to create")) {
      out = s.synth;
    } else {
      out = s.basic;
    }
    return ProviderReply{out, static_cast<std::int64_t>(p.size()), static_cast<std::int64_t>(out.size())};
  });
}

class PipelineTest : public ::testing::Test {
 protected:
  void SetUp() override {
    db_ = dir_ / "pets.sqlite";
    make_db(db_,
            "CREATE TABLE pets(id INTEGER PRIMARY KEY, name TEXT, age INTEGER);"
            "INSERT INTO pets VALUES (1,'Rex',3),(2,'Tom',5);");
    schema_.tables.push_back(
        {"pets", {{"id", "INTEGER", {}, {}}, {"name", "TEXT", {}, {"Rex", "Tom"}}, {"age", "INTEGER", {}, {}}},
         {"id"}, {}});
    linked_ = LinkedSchema{{{"pets", {"name", "age"}}}, LinkProvenance::kModel};
    query_ = NLQuery{"q", "List the pet names.", "pets are animals", "pets", "SELECT name FROM pets", {}};
  }

  GenerationInput input() const { return GenerationInput{query_, schema_, linked_, db_}; }

  TempDir dir_;
  fs::path db_;
  DatabaseSchema schema_;
  LinkedSchema linked_;
  NLQuery query_;
};

}  // namespace

TEST(ExtractSql, Examples) {
  EXPECT_EQ(extract_sql("```sql\nSELECT 1\n```").sql, "SELECT 1");
  EXPECT_TRUE(extract_sql("```sql\nSELECT 1\n```").fenced);
  EXPECT_EQ(extract_sql("```sql\nSELECT 1\n```\ntext\n```sql\n SELECT 2 \n```").sql, "SELECT 2");
  const auto bare = extract_sql("SELECT 2");
  EXPECT_EQ(bare.sql, "SELECT 2");
  EXPECT_FALSE(bare.fenced);
  try {
    extract_sql("  \n ");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kEmptySql);
  }
  EXPECT_THROW(extract_sql("```sql\n\n```"), Error);
}

TEST(SubQuestions, ParseRules) {
  const auto three = parse_sub_questions(
      "Sub-question 1: <<a>>\nnoise\nSub-question 2: <<b>>\nSub-question 7: <<c>>", 8);
  EXPECT_EQ(three, (std::vector<SubQuestion>{{1, "a"}, {2, "b"}, {3, "c"}}));
  EXPECT_TRUE(parse_sub_questions("no sub-questions here", 8).empty());
  std::string ten;
  for (int i = 1; i <= 10; ++i) ten += "Sub-question " + std::to_string(i) + ": <<s" + std::to_string(i) + ">>\n";
  const auto capped = parse_sub_questions(ten, 8);
  ASSERT_EQ(capped.size(), 8u);
  EXPECT_EQ(capped.back(), (SubQuestion{8, "s8"}));
}

TEST(Synthesis, ParseRules) {
  const std::string three =
      "\"Question\": \"q1\"\n\"SQL\": \"SELECT 1\"\n\n\"Question\": \"q2\",\n\"SQL\": \"SELECT 2\"\n\n"
      "{\"question\": \"q3\", \"sql\": \"SELECT 3\"}";
  const auto ex = parse_synthesized_examples(three, 3);
  EXPECT_EQ(ex, (std::vector<SynthesizedExample>{{"q1", "SELECT 1"}, {"q2", "SELECT 2"}, {"q3", "SELECT 3"}}));
  EXPECT_EQ(parse_synthesized_examples(three, 2).size(), 2u);
  EXPECT_TRUE(parse_synthesized_examples("nothing useful", 3).empty());
  EXPECT_TRUE(parse_synthesized_examples("\"SQL\": \"SELECT 1\"", 3).empty());
}

TEST(Synthesis, RenderRoundTrips) {
  const std::vector<SynthesizedExample> ex = {{"How many?", "SELECT count(*) FROM t"}, {"Who?", "SELECT n FROM t"}};
  EXPECT_EQ(parse_synthesized_examples(render_examples(ex), 5), ex);
}

TEST_F(PipelineTest, BasicUsesOneCallWithExactUsage) {
  StepScript s;
  auto p = scripted(s);
  Gateway gw(GatewayOptions{GatewayMode::kPassthrough, {}, 2}, p);
  Pipelines pl(gw, {});
  const auto r = pl.generate(Tier::kBasic, input());
  EXPECT_EQ(r.sql, "SELECT name FROM pets");
  EXPECT_EQ(p->calls(), 1);
  ASSERT_EQ(r.steps.size(), 1u);
  EXPECT_EQ(r.usage.prompt_tokens, static_cast<std::int64_t>(p->prompts()[0].size()));
  EXPECT_EQ(r.usage.completion_tokens, static_cast<std::int64_t>(s.basic.size()));
  EXPECT_EQ(r.usage.phase, Phase::kGeneration);
  const auto prompt = p->prompts()[0];
  EXPECT_TRUE(has(prompt, "# Table: pets"));
  EXPECT_TRUE(has(prompt, "(name: TEXT"));
  EXPECT_FALSE(has(prompt, "(id: INTEGER"));  // not linked
  EXPECT_TRUE(has(prompt, "pets are animals"));
}

TEST_F(PipelineTest, BasicProseOnlyIsEmptySqlFailure) {
  StepScript s;
  s.basic = "   ";
  Gateway gw(GatewayOptions{GatewayMode::kPassthrough, {}, 2}, scripted(s));
  Pipelines pl(gw, {});
  try {
    pl.generate(Tier::kBasic, input());
    FAIL();
  } catch (const GenerationFailure& f) {
    EXPECT_EQ(f.code(), ErrorCode::kEmptySql);
    EXPECT_EQ(f.partial().steps.size(), 1u);
    EXPECT_GT(f.partial().usage.prompt_tokens, 0);
  }
}

TEST_F(PipelineTest, UnfencedFlagged) {
  StepScript s;
  s.basic = "SELECT name FROM pets";
  Gateway gw(GatewayOptions{GatewayMode::kPassthrough, {}, 2}, scripted(s));
  Pipelines pl(gw, {});
  const auto r = pl.generate(Tier::kBasic, input());
  EXPECT_EQ(r.steps[0].flag, "unfenced");
}

TEST_F(PipelineTest, IntermediateStepsAndAccounting) {
  StepScript s;
  auto p = scripted(s);
  Gateway gw(GatewayOptions{GatewayMode::kPassthrough, {}, 2}, p);
  Pipelines pl(gw, {});
  const auto r = pl.generate(Tier::kIntermediate, input());
  std::vector<std::string> names;
  TokenUsage sum{0, 0, Phase::kGeneration, false};
  for (const auto& st : r.steps) {
    names.push_back(st.name);
    sum = merge_usage(sum, st.usage);
  }
  EXPECT_EQ(names, (std::vector<std::string>{"divide", "conquer_1", "conquer_2", "assemble"}));
  EXPECT_EQ(sum, r.usage);
  EXPECT_EQ(r.sql, "SELECT name FROM pets");
  // Conquer prompts carry the sub-question and an empty examples section.
  const auto prompts = p->prompts();
  EXPECT_TRUE(has(prompts[1], "### Question:\n\nWhich pets exist?"));
  EXPECT_TRUE(has(prompts[1], "### Examples:\n\n\n"));
}

TEST_F(PipelineTest, AssemblePromptContainsEverySubSql) {
  StepScript s;
  int n = 0;
  auto p = std::make_shared<FnProvider>([&](const ChatRequest& r) {
    std::string out;
    if (has(r.prompt, "1. Parse user questions")) {
      out = sql_block("SELECT " + std::to_string(100 + n++));
    } else if (has(r.prompt, "decompose the question")) {
      out = "Sub-question 1: <<a?>>\nSub-question 2: <<b?>>\nSub-question 3: <<c?>>";
    } else {
      out = sql_block("SELECT name FROM pets");
    }
    return ProviderReply{out, 1, 1};
  });
  Gateway gw(GatewayOptions{GatewayMode::kPassthrough, {}, 1}, p);
  Pipelines pl(gw, {});
  pl.generate(Tier::kIntermediate, input());
  const auto prompts = p->prompts();
  ASSERT_EQ(prompts.size(), 5u);
  for (const char* sql : {"SELECT 100", "SELECT 101", "SELECT 102"}) EXPECT_TRUE(has(prompts[4], sql)) << sql;
}

TEST_F(PipelineTest, DegenerateDivideUsesWholeQuestion) {
  StepScript s;
  s.divide = "I cannot decompose this.";
  auto p = scripted(s);
  Gateway gw(GatewayOptions{GatewayMode::kPassthrough, {}, 2}, p);
  Pipelines pl(gw, {});
  const auto r = pl.generate(Tier::kIntermediate, input());
  EXPECT_EQ(r.steps[0].flag, "degenerate");
  EXPECT_EQ(r.steps.size(), 3u);  // divide, conquer_1, assemble
  EXPECT_TRUE(has(p->prompts()[1], "### Question:\n\nList the pet names."));
}

TEST_F(PipelineTest, SingleSubQuestionStillAssembles) {
  StepScript s;
  s.divide = "Sub-question 1: <<List the pet names.>>";
  auto p = scripted(s);
  Gateway gw(GatewayOptions{GatewayMode::kPassthrough, {}, 2}, p);
  Pipelines pl(gw, {});
  const auto r = pl.generate(Tier::kIntermediate, input());
  EXPECT_EQ(r.steps.back().name, "assemble");
}

TEST_F(PipelineTest, RefineShortCircuitsOnRows) {
  StepScript s;
  auto p = scripted(s);
  Gateway gw(GatewayOptions{GatewayMode::kPassthrough, {}, 2}, p);
  Pipelines pl(gw, {});
  GenerationResult res;
  EXPECT_EQ(pl.refine("SELECT name FROM pets", input(), res), "SELECT name FROM pets");
  EXPECT_EQ(p->calls(), 0);
  EXPECT_EQ(res.usage, (TokenUsage{0, 0, Phase::kGeneration, false}));
}

TEST_F(PipelineTest, RefineFixesBrokenSql) {
  StepScript s;
  auto p = scripted(s);
  Gateway gw(GatewayOptions{GatewayMode::kPassthrough, {}, 2}, p);
  Pipelines pl(gw, {});
  GenerationResult res;
  EXPECT_EQ(pl.refine("SELEC name FROM pets", input(), res), "SELECT name FROM pets WHERE age > 0");
  ASSERT_EQ(p->calls(), 1);
  const auto prompt = p->prompts()[0];
  EXPECT_TRUE(has(prompt, "SELEC name FROM pets"));
  EXPECT_TRUE(has(prompt, "syntax error"));
  EXPECT_TRUE(has(prompt, "List the pet names."));
  EXPECT_TRUE(has(prompt, "# Table: pets"));
}

TEST_F(PipelineTest, RefineEmptyResultIssuesExactlyOneCall) {
  StepScript s;
  s.refine = sql_block("SELECT name FROM pets WHERE age > 100");  // still empty
  auto p = scripted(s);
  Gateway gw(GatewayOptions{GatewayMode::kPassthrough, {}, 2}, p);
  Pipelines pl(gw, {});
  GenerationResult res;
  EXPECT_EQ(pl.refine("SELECT name FROM pets WHERE age > 50", input(), res),
            "SELECT name FROM pets WHERE age > 100");
  EXPECT_EQ(p->calls(), 1);
  EXPECT_TRUE(has(p->prompts()[0], "empty result"));
  EXPECT_EQ(res.steps.at(0).name, "refine_1");
}

TEST_F(PipelineTest, RefineRoundsConfigurable) {
  StepScript s;
  s.refine = sql_block("SELECT name FROM pets WHERE age > 100");
  auto p = scripted(s);
  Gateway gw(GatewayOptions{GatewayMode::kPassthrough, {}, 2}, p);
  PipelineOptions o;
  o.refine_rounds = 3;
  Pipelines pl(gw, o);
  GenerationResult res;
  pl.refine("SELECT 1 WHERE 0", input(), res);
  EXPECT_EQ(p->calls(), 3);
  o.refine_rounds = 4;
  EXPECT_THROW(Pipelines(gw, o), Error);
}

TEST_F(PipelineTest, RefineKeepsSqlWhenCorrectionIsEmpty) {
  StepScript s;
  s.refine = "  ";
  Gateway gw(GatewayOptions{GatewayMode::kPassthrough, {}, 2}, scripted(s));
  Pipelines pl(gw, {});
  GenerationResult res;
  EXPECT_EQ(pl.refine("SELECT 1 WHERE 0", input(), res), "SELECT 1 WHERE 0");
  EXPECT_EQ(res.steps.back().flag, "empty");
}

TEST_F(PipelineTest, AdvancedInjectsSynthesizedExamples) {
  StepScript s;
  auto p = scripted(s);
  Gateway gw(GatewayOptions{GatewayMode::kPassthrough, {}, 2}, p);
  Pipelines pl(gw, {});
  const auto r = pl.generate(Tier::kAdvanced, input());
  std::vector<std::string> names;
  for (const auto& st : r.steps) names.push_back(st.name);
  EXPECT_EQ(names, (std::vector<std::string>{"divide", "synthesize", "conquer_1", "conquer_2", "assemble"}));
  EXPECT_EQ(r.steps[1].flag, "short");  // asked for 3, got 2
  const auto prompts = p->prompts();
  EXPECT_TRUE(has(prompts[1], "create 3 examples"));
  for (int i : {2, 3}) {
    EXPECT_TRUE(has(prompts[i], "\"Question\": \"How many pets?\"\n\"SQL\": \"SELECT count(*) FROM pets\""));
    EXPECT_TRUE(has(prompts[i], "Oldest pet?"));
  }
}

TEST_F(PipelineTest, AdvancedPerSubQuestionSynthesis) {
  StepScript s;
  auto p = scripted(s);
  Gateway gw(GatewayOptions{GatewayMode::kPassthrough, {}, 2}, p);
  PipelineOptions o;
  o.synth_per_subquestion = true;
  Pipelines pl(gw, o);
  const auto r = pl.generate(Tier::kAdvanced, input());
  int synth = 0;
  for (const auto& st : r.steps) synth += st.name == "synthesize";
  EXPECT_EQ(synth, 2);
}

TEST_F(PipelineTest, EmptySynthesisMatchesIntermediatePrompts) {
  StepScript s;
  s.synth = "I could not think of any.";
  auto pa = scripted(s);
  auto pm = scripted(s);
  Gateway ga(GatewayOptions{GatewayMode::kPassthrough, {}, 1}, pa);
  Gateway gm(GatewayOptions{GatewayMode::kPassthrough, {}, 1}, pm);
  const auto ra = Pipelines(ga, {}).generate(Tier::kAdvanced, input());
  const auto rm = Pipelines(gm, {}).generate(Tier::kIntermediate, input());
  EXPECT_EQ(ra.steps[1].flag, "degenerate");
  auto a = pa->prompts();
  const auto m = pm->prompts();
  a.erase(a.begin() + 1);  // the synthesis prompt itself
  EXPECT_EQ(a, m);
  EXPECT_EQ(ra.sql, rm.sql);
}

TEST_F(PipelineTest, ZeroExamplesRejected) {
  Gateway gw(GatewayOptions{GatewayMode::kPassthrough, {}, 1}, scripted({}));
  Pipelines pl(gw, {});
  try {
    pl.generate_advanced(input(), 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kPrecondition);
  }
}

TEST_F(PipelineTest, EmptyLinkedSchemaRejected) {
  Gateway gw(GatewayOptions{GatewayMode::kPassthrough, {}, 1}, scripted({}));
  Pipelines pl(gw, {});
  const LinkedSchema empty;
  GenerationInput in{query_, schema_, empty, db_};
  EXPECT_THROW(pl.generate(Tier::kBasic, in), Error);
}

TEST_F(PipelineTest, CostGrowsWithTier) {
  StepScript s;
  std::array<std::int64_t, 3> cost{};
  for (Tier t : kAllTiers) {
    Gateway gw(GatewayOptions{GatewayMode::kPassthrough, {}, 1}, scripted(s));
    const auto r = Pipelines(gw, {}).generate(t, input());
    cost[tier_index(t)] = r.usage.prompt_tokens + r.usage.completion_tokens;
  }
  EXPECT_LE(cost[0], cost[1]);
  EXPECT_LE(cost[1], cost[2]);
}

TEST_F(PipelineTest, ReplayIsDeterministic) {
  StepScript s;
  Gateway rec(GatewayOptions{GatewayMode::kRecord, dir_ / "cache", 2}, scripted(s));
  Gateway replay(GatewayOptions{GatewayMode::kReplayStrict, dir_ / "cache", 2}, nullptr);
  for (Tier t : kAllTiers) {
    const auto a = Pipelines(rec, {}).generate(t, input());
    const auto b = Pipelines(replay, {}).generate(t, input());
    const auto c = Pipelines(replay, {}).generate(t, input());
    EXPECT_EQ(a.sql, b.sql);
    EXPECT_EQ(a.steps, b.steps);
    EXPECT_EQ(b.steps, c.steps);
    EXPECT_EQ(a.usage, c.usage);
  }
}

// The shipped fixture: every tier and query replays with monotone cost.
TEST(PipelineFixture, AllTiersReplayWithMonotoneCost) {
  const Config cfg = load_config(fixture_dir() / "config.json");
  const Dataset ds = load_dataset(cfg.dataset);
  Gateway gw(cfg.gateway, nullptr);
  Pipelines pl(gw, cfg.pipelines);
  for (const auto& q : ds.queries) {
    const auto& schema = ds.registry.schema(q.db_id);
    const auto linked = link(q, schema, gw, cfg.linker).linked;
    GenerationInput in{q, schema, linked, ds.registry.db_path(q.db_id)};
    std::array<std::int64_t, 3> cost{};
    for (Tier t : kAllTiers) {
      const auto r = pl.generate(t, in);
      EXPECT_FALSE(r.sql.empty());
      cost[tier_index(t)] = r.usage.prompt_tokens;
    }
    EXPECT_LE(cost[0], cost[1]) << q.id;
    EXPECT_LE(cost[1], cost[2]) << q.id;
  }
}
