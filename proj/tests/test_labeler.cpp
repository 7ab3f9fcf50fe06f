#include <gtest/gtest.h>

#include <random>
#include <thread>

#include "support/test_util.hpp"
#include "tiersql/labeler.hpp"

using namespace tiersql;
using namespace tiersql::testing;

namespace {

NLQuery gold_query(std::string id = "q1") {
  return NLQuery{std::move(id), "How many rows?", "rows are rows", "db", "SELECT count(*) FROM t", {}};
}

const LinkedSchema kLinked{{{"t", {"a", "b"}}}, LinkProvenance::kModel};

// Outcome pattern bit i set means tier i passes.
struct Scripted {
  unsigned pattern;
  std::vector<Tier> invoked;

  TierOutcome operator()(Tier t) {
    invoked.push_back(t);
    TierOutcome o;
    o.sql = "SELECT " + std::to_string(tier_index(t));
    o.correct = (pattern >> tier_index(t)) & 1u;
    o.usage = {10 * (1 + static_cast<std::int64_t>(tier_index(t))), 1, Phase::kGeneration, false};
    return o;
  }
};

class FakePipelines : public TierPipelines {
 public:
  std::array<std::string, 3> sql;
  std::array<bool, 3> fail{};
  std::vector<Tier> calls;

  GenerationResult generate(Tier tier, const GenerationInput&) override {
    calls.push_back(tier);
    GenerationResult r;
    r.usage = {7, 3, Phase::kGeneration, false};
    if (fail[tier_index(tier)]) {
      throw GenerationFailure(Error(ErrorCode::kEmptySql, "no SQL"), r);
    }
    r.sql = sql[tier_index(tier)];
    return r;
  }
};

}  // namespace

TEST(Waterfall, AllOutcomePatterns) {
  for (unsigned pattern = 0; pattern < 8; ++pattern) {
    Scripted s{pattern, {}};
    const auto ex = waterfall_label(gold_query(), kLinked, std::ref(s));
    const bool b = pattern & 1u, m = pattern & 2u, a = pattern & 4u;
    const Tier expected = b ? Tier::kBasic : m ? Tier::kIntermediate : Tier::kAdvanced;
    EXPECT_EQ(ex.label, expected) << pattern;
    EXPECT_EQ(ex.solved, b || m || a) << pattern;
    // A tier is invoked iff all cheaper tiers failed.
    std::vector<Tier> want = {Tier::kBasic};
    if (!b) want.push_back(Tier::kIntermediate);
    if (!b && !m) want.push_back(Tier::kAdvanced);
    EXPECT_EQ(s.invoked, want) << pattern;
    for (Tier t : kAllTiers) {
      EXPECT_EQ(ex.outcomes[tier_index(t)].has_value(), !tier_cheaper(ex.label, t)) << pattern;
      if (tier_cheaper(t, ex.label)) EXPECT_FALSE(ex.outcomes[tier_index(t)]->correct);
    }
    if (ex.solved) EXPECT_TRUE(ex.outcomes[tier_index(ex.label)]->correct);
  }
}

TEST(Waterfall, CopiesQueryContext) {
  Scripted s{2, {}};
  const auto ex = waterfall_label(gold_query("q7"), kLinked, std::ref(s));
  EXPECT_EQ(ex.query_id, "q7");
  EXPECT_EQ(ex.hint, "rows are rows");
  EXPECT_EQ(ex.features, (FeatureVector{1, 2}));
  EXPECT_EQ(ex.linked_schema, kLinked);
}

TEST(Waterfall, MissingGoldIsPrecondition) {
  NLQuery q = gold_query();
  q.gold_sql.reset();
  Scripted s{1, {}};
  try {
    waterfall_label(q, kLinked, std::ref(s));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kPrecondition);
  }
  EXPECT_TRUE(s.invoked.empty());
}

TEST(PreferencePairs, LabelBeatsEveryOtherTier) {
  EXPECT_EQ(derive_preference_pairs(Tier::kBasic),
            (std::vector<PreferencePair>{{Tier::kBasic, Tier::kIntermediate}, {Tier::kBasic, Tier::kAdvanced}}));
  EXPECT_EQ(derive_preference_pairs(Tier::kIntermediate),
            (std::vector<PreferencePair>{{Tier::kIntermediate, Tier::kBasic}, {Tier::kIntermediate, Tier::kAdvanced}}));
  EXPECT_EQ(derive_preference_pairs(Tier::kAdvanced),
            (std::vector<PreferencePair>{{Tier::kAdvanced, Tier::kBasic}, {Tier::kAdvanced, Tier::kIntermediate}}));
}

class AttemptTest : public ::testing::Test {
 protected:
  void SetUp() override {
    db_ = dir_ / "t.sqlite";
    make_db(db_, "CREATE TABLE t(a INTEGER, b TEXT); INSERT INTO t VALUES (1,'x'),(2,'y');");
    schema_.tables.push_back({"t", {{"a", "INTEGER", {}, {}}, {"b", "TEXT", {}, {}}}, {}, {}});
  }
  TempDir dir_;
  fs::path db_;
  DatabaseSchema schema_;
};

TEST_F(AttemptTest, RealExecutionDecidesLabel) {
  const NLQuery q = gold_query();
  GenerationInput in{q, schema_, kLinked, db_};
  FakePipelines p;
  p.sql = {"SELECT count(a) FROM t WHERE a > 1", "SELECT count(*) FROM t", "SELECT 2"};
  const auto ex = waterfall_label(in, p);
  EXPECT_EQ(ex.label, Tier::kIntermediate);
  EXPECT_TRUE(ex.solved);
  EXPECT_EQ(p.calls, (std::vector<Tier>{Tier::kBasic, Tier::kIntermediate}));
  EXPECT_EQ(ex.outcomes[0]->sql, "SELECT count(a) FROM t WHERE a > 1");
  EXPECT_EQ(ex.outcomes[1]->usage, (TokenUsage{7, 3, Phase::kGeneration, false}));
}

TEST_F(AttemptTest, GenerationFailureKeepsSpendAndContinues) {
  const NLQuery q = gold_query();
  GenerationInput in{q, schema_, kLinked, db_};
  FakePipelines p;
  p.fail = {true, false, false};
  p.sql = {"", "SELECT nope", "SELECT 2"};
  const auto ex = waterfall_label(in, p);
  EXPECT_EQ(ex.label, Tier::kAdvanced);
  EXPECT_TRUE(ex.solved);
  ASSERT_TRUE(ex.outcomes[0]->error);
  EXPECT_EQ(ex.outcomes[0]->usage.prompt_tokens, 7);
  EXPECT_FALSE(ex.outcomes[1]->correct);
  EXPECT_FALSE(ex.outcomes[1]->error);  // bad SQL is a mismatch, not an error
}

TEST_F(AttemptTest, AllFailIsUnsolvedAdvanced) {
  const NLQuery q = gold_query();
  GenerationInput in{q, schema_, kLinked, db_};
  FakePipelines p;
  p.sql = {"SELECT 0", "SELECT 1", "SELECT 3"};
  const auto ex = waterfall_label(in, p);
  EXPECT_EQ(ex.label, Tier::kAdvanced);
  EXPECT_FALSE(ex.solved);
}

TEST_F(AttemptTest, BrokenGoldPropagates) {
  NLQuery q = gold_query();
  q.gold_sql = "SELECT missing FROM t";
  GenerationInput in{q, schema_, kLinked, db_};
  FakePipelines p;
  p.sql = {"SELECT 1", "SELECT 1", "SELECT 1"};
  try {
    waterfall_label(in, p);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kGoldError);
  }
}

TEST(TrainingSet, RoundTripIsLossless) {
  TempDir dir;
  std::vector<LabeledExample> examples;
  for (unsigned pattern : {1u, 2u, 0u}) {
    Scripted s{pattern, {}};
    examples.push_back(waterfall_label(gold_query("q" + std::to_string(pattern)), kLinked, std::ref(s)));
  }
  examples[2].outcomes[2]->error = "generate: timed out";
  examples[1].linked_schema.provenance = LinkProvenance::kFallbackFull;
  const auto path = dir / "train.jsonl";
  export_training_set(examples, path);
  const auto content = read_file(path);
  EXPECT_EQ(text::count_occurrences(content, "\n"), 3u);
  EXPECT_EQ(import_training_set(path), examples);
  EXPECT_EQ(label_counts(import_training_set(path)), label_counts(examples));
}

TEST(TrainingSet, FieldOrderAndPairs) {
  Scripted solved{2, {}};
  Scripted unsolved{0, {}};
  const auto a = waterfall_label(gold_query("a"), kLinked, std::ref(solved));
  const auto b = waterfall_label(gold_query("b"), kLinked, std::ref(unsolved));
  const auto ja = to_json(a);
  std::vector<std::string> keys;
  for (const auto& [k, _] : ja.items()) keys.push_back(k);
  EXPECT_EQ(keys, (std::vector<std::string>{"query_id", "label", "solved", "features", "question", "hint",
                                            "linked_schema", "link_provenance", "preference_pairs", "outcomes"}));
  EXPECT_EQ(ja["preference_pairs"].dump(),
            R"([{"preferred":"Intermediate","rejected":"Basic"},{"preferred":"Intermediate","rejected":"Advanced"}])");
  EXPECT_TRUE(to_json(b)["preference_pairs"].empty());
  EXPECT_EQ(to_json(b, {.pairs_for_unsolved = true})["preference_pairs"].size(), 2u);
  EXPECT_EQ(ja["features"].dump(), R"({"n_tables":1,"n_columns":2})");
}

TEST(TrainingSet, EmptyListGivesEmptyFile) {
  TempDir dir;
  export_training_set({}, dir / "e.jsonl");
  EXPECT_EQ(read_file(dir / "e.jsonl"), "");
  EXPECT_TRUE(import_training_set(dir / "e.jsonl").empty());
}

TEST(TrainingSet, BadLineReportsLineNumber) {
  TempDir dir;
  Scripted s{1, {}};
  const auto ex = waterfall_label(gold_query(), kLinked, std::ref(s));
  write_file(dir / "bad.jsonl", to_json(ex).dump() + "\n\n{\"query_id\":\"x\"}\n");
  try {
    import_training_set(dir / "bad.jsonl");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDecode);
    EXPECT_NE(std::string(e.what()).find("bad.jsonl:3"), std::string::npos) << e.what();
  }
}

TEST(TrainingSet, CountsMatchRandomInput) {
  std::mt19937 rng(3);
  std::vector<LabeledExample> examples;
  std::array<std::size_t, 3> expected{};
  for (int i = 0; i < 200; ++i) {
    Scripted s{static_cast<unsigned>(rng() % 8), {}};
    examples.push_back(waterfall_label(gold_query("q" + std::to_string(i)), kLinked, std::ref(s)));
    ++expected[tier_index(examples.back().label)];
  }
  TempDir dir;
  export_training_set(examples, dir / "r.jsonl");
  EXPECT_EQ(label_counts(import_training_set(dir / "r.jsonl")), expected);
  const auto points = to_training_points(examples);
  ASSERT_EQ(points.size(), examples.size());
  EXPECT_EQ(points[17].label, examples[17].label);
}

TEST(Budget, AdmissionStopsAtQueryLimit) {
  BudgetTracker b({.max_queries = 3, .max_weighted_tokens = 1e9, .mu = 4});
  EXPECT_TRUE(b.try_admit());
  EXPECT_TRUE(b.try_admit());
  EXPECT_TRUE(b.try_admit());
  EXPECT_FALSE(b.try_admit());
  EXPECT_EQ(b.admitted(), 3u);
}

TEST(Budget, AdmissionStopsOnceSpendReached) {
  BudgetTracker b({.max_queries = 100, .max_weighted_tokens = 100, .mu = 4});
  EXPECT_TRUE(b.try_admit());
  b.charge({60, 5, Phase::kGeneration, false});  // 80
  EXPECT_DOUBLE_EQ(b.spent(), 80.0);
  EXPECT_TRUE(b.try_admit());
  b.charge({20, 0, Phase::kLinking, false});
  EXPECT_FALSE(b.try_admit());
}

TEST(Budget, ConcurrentAdmissionNeverExceedsLimit) {
  BudgetTracker b({.max_queries = 50, .max_weighted_tokens = 1e12, .mu = 4});
  std::atomic<int> admitted{0};
  {
    std::vector<std::jthread> threads;
    for (int i = 0; i < 8; ++i) {
      threads.emplace_back([&] {
        for (int j = 0; j < 20; ++j) {
          if (b.try_admit()) ++admitted;
        }
      });
    }
  }
  EXPECT_EQ(admitted.load(), 50);
}

TEST(Budget, InvalidConfiguration) {
  EXPECT_THROW(BudgetTracker({.max_queries = 0, .max_weighted_tokens = 1, .mu = 4}), Error);
  EXPECT_THROW(BudgetTracker({.max_queries = 1, .max_weighted_tokens = 0, .mu = 4}), Error);
}
