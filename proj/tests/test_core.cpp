#include <gtest/gtest.h>

#include <random>

#include "tiersql/core.hpp"
#include "tiersql/sha256.hpp"
#include "tiersql/text.hpp"

using namespace tiersql;

TEST(Tier, CheaperExamples) {
  EXPECT_TRUE(tier_cheaper(Tier::kBasic, Tier::kAdvanced));
  EXPECT_FALSE(tier_cheaper(Tier::kAdvanced, Tier::kBasic));
  EXPECT_FALSE(tier_cheaper(Tier::kIntermediate, Tier::kIntermediate));
}

TEST(Tier, OrderIsStrictTotalAndTransitive) {
  for (Tier a : kAllTiers) {
    EXPECT_FALSE(tier_cheaper(a, a));
    for (Tier b : kAllTiers) {
      if (a != b) EXPECT_NE(tier_cheaper(a, b), tier_cheaper(b, a));
      for (Tier c : kAllTiers) {
        if (tier_cheaper(a, b) && tier_cheaper(b, c)) EXPECT_TRUE(tier_cheaper(a, c));
      }
    }
  }
  EXPECT_EQ(kTierCount, 3u);
}

TEST(Tier, NamesRoundTrip) {
  for (Tier t : kAllTiers) EXPECT_EQ(parse_tier(tier_name(t)), t);
  EXPECT_EQ(parse_tier("advanced"), Tier::kAdvanced);
  EXPECT_EQ(parse_tier("G_M"), Tier::kIntermediate);
  EXPECT_EQ(parse_tier("b"), Tier::kBasic);
  try {
    parse_tier("Expert");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kConfig);
  }
}

TEST(Usage, MergeExamples) {
  auto m = [](std::int64_t a, std::int64_t b, std::int64_t c, std::int64_t d) {
    auto r = merge_usage({a, b, Phase::kGeneration, false}, {c, d, Phase::kGeneration, false});
    return std::pair{r.prompt_tokens, r.completion_tokens};
  };
  EXPECT_EQ(m(100, 20, 50, 5), (std::pair<std::int64_t, std::int64_t>{150, 25}));
  EXPECT_EQ(m(0, 0, 7, 3), (std::pair<std::int64_t, std::int64_t>{7, 3}));
  EXPECT_EQ(m(1, 1, 2, 2), (std::pair<std::int64_t, std::int64_t>{3, 3}));
}

TEST(Usage, PhaseMismatchThrows) {
  try {
    merge_usage({1, 1, Phase::kLinking, false}, {1, 1, Phase::kGeneration, false});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kUsageMerge);
  }
}

TEST(Usage, EstimatedFlagIsSticky) {
  auto r = merge_usage({1, 1, Phase::kRouting, true}, {1, 1, Phase::kRouting, false});
  EXPECT_TRUE(r.estimated);
  EXPECT_EQ(r.phase, Phase::kRouting);
}

TEST(Usage, MergeIsAssociativeAndCommutative) {
  std::mt19937 rng(7);
  std::uniform_int_distribution<std::int64_t> d(0, 100000);
  const TokenUsage zero{0, 0, Phase::kGeneration, false};
  for (int i = 0; i < 500; ++i) {
    TokenUsage a{d(rng), d(rng), Phase::kGeneration, false};
    TokenUsage b{d(rng), d(rng), Phase::kGeneration, false};
    TokenUsage c{d(rng), d(rng), Phase::kGeneration, false};
    EXPECT_EQ(merge_usage(a, b), merge_usage(b, a));
    EXPECT_EQ(merge_usage(merge_usage(a, b), c), merge_usage(a, merge_usage(b, c)));
    EXPECT_EQ(merge_usage(a, zero), a);
  }
}

TEST(Usage, JsonRejectsNegativeCounts) {
  ojson j = to_json(TokenUsage{3, 4, Phase::kLinking, true});
  EXPECT_EQ(usage_from_json(j), (TokenUsage{3, 4, Phase::kLinking, true}));
  j["completion_tokens"] = -1;
  EXPECT_THROW(usage_from_json(j), Error);
}

TEST(Schema, ValidateCatchesCollisionsAndDanglingKeys) {
  DatabaseSchema s;
  s.tables.push_back({"t", {{"a", "INT", {}, {}}, {"b", "TEXT", {}, {}}}, {"a"}, {}});
  s.tables.push_back({"u", {{"x", "INT", {}, {}}}, {}, {{"x", "t", "a"}}});
  EXPECT_NO_THROW(s.validate());

  auto dup = s;
  dup.tables.push_back({"T", {}, {}, {}});
  EXPECT_THROW(dup.validate(), Error);

  auto dup_col = s;
  dup_col.tables[0].columns.push_back({"A", "INT", {}, {}});
  EXPECT_THROW(dup_col.validate(), Error);

  auto dangling = s;
  dangling.tables[1].foreign_keys[0].foreign_column = "zz";
  EXPECT_THROW(dangling.validate(), Error);
}

TEST(Schema, FullLinkedSchemaKeepsEverything) {
  DatabaseSchema s;
  s.tables.push_back({"t", {{"a", "", {}, {}}, {"b", "", {}, {}}}, {}, {}});
  s.tables.push_back({"u", {{"c", "", {}, {}}}, {}, {}});
  const auto full = LinkedSchema::full(s);
  EXPECT_EQ(full.provenance, LinkProvenance::kFallbackFull);
  EXPECT_EQ(full.column_count(), s.column_count());
  for (const auto& t : s.tables) {
    for (const auto& c : t.columns) EXPECT_TRUE(full.contains(t.name, c.name));
  }
  EXPECT_TRUE(full.contains("T", "A"));
  EXPECT_FALSE(full.contains("t", "c"));
}

TEST(Trace, JsonRoundTrip) {
  RunTrace t;
  t.query_id = "q1";
  t.router = "knn";
  t.chosen_tier = Tier::kIntermediate;
  t.predicted_sql = "SELECT 1";
  t.usage = {{10, 2, Phase::kLinking, false}, {0, 0, Phase::kRouting, false},
             {30, 4, Phase::kGeneration, true}};
  t.correct = true;
  t.oracle_label = Tier::kBasic;
  t.link_provenance = LinkProvenance::kFallbackFull;
  t.steps = {{"link", std::string(64, 'a'), "malformed", {10, 2, Phase::kLinking, false}}};
  t.error = "generate: boom";
  const auto back = trace_from_json(to_json(t));
  EXPECT_EQ(to_json(back).dump(), to_json(t).dump());
  EXPECT_FALSE(to_json(t).contains("wall_clock_ms"));
}

TEST(Trace, NullCorrectStaysAbsent) {
  RunTrace t;
  t.query_id = "q";
  const auto j = to_json(t);
  EXPECT_TRUE(j["correct"].is_null());
  EXPECT_FALSE(trace_from_json(j).correct.has_value());
}

TEST(Text, FillTemplateSinglePass) {
  EXPECT_EQ(text::fill_template("{a}-{b}-{c}", {{"a", "{b}"}, {"b", "2"}}), "{b}-2-{c}");
  EXPECT_EQ(text::fill_template("{", {{"a", "x"}}), "{");
  EXPECT_EQ(text::fill_template("{sub question 1}", {{"sub question 1", "S"}}), "S");
}

TEST(Text, Helpers) {
  EXPECT_EQ(text::trim("  a b \n"), "a b");
  EXPECT_TRUE(text::iequals("FrPm", "frpm"));
  EXPECT_FALSE(text::iequals("frpm", "frp"));
  EXPECT_EQ(text::count_occurrences("aaaa", "aa"), 2u);
  EXPECT_EQ(text::count_occurrences("abc", ""), 0u);
}

TEST(Sha256, KnownVectors) {
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}
