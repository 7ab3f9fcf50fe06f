#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tiersql/core.hpp"

namespace tiersql {

struct FeatureVector {
  std::int64_t n_tables = 0;
  std::int64_t n_columns = 0;

  bool operator==(const FeatureVector&) const = default;
};

inline FeatureVector build_features(const LinkedSchema& linked) {
  return {static_cast<std::int64_t>(linked.entries.size()),
          static_cast<std::int64_t>(linked.column_count())};
}

struct LabeledPoint {
  FeatureVector features;
  Tier label = Tier::kBasic;
};

/// Per-tier scores indexed by tier_index().
using ScoreMap = std::array<double, kTierCount>;

struct RoutingDecision {
  Tier tier = Tier::kBasic;
  std::optional<ScoreMap> scores;
  TokenUsage router_usage{0, 0, Phase::kRouting, false};
  std::string router_name;
};

// ---------------------------------------------------------------------------
// Pure routing rules.

/// Majority vote among the k nearest training points (Euclidean on
/// (tables, columns)). Distance ties go to the lower training index, vote
/// ties to the cheaper tier.
inline RoutingDecision knn_route(const FeatureVector& v, std::span<const LabeledPoint> train,
                                 std::size_t k) {
  if (train.empty()) throw Error(ErrorCode::kConfig, "KNN router has an empty training set");
  if (k == 0) throw Error(ErrorCode::kConfig, "KNN k must be >= 1");

  // Squared distances are exact integers and order identically to Euclidean.
  std::vector<std::pair<std::int64_t, std::size_t>> by_distance;
  by_distance.reserve(train.size());
  for (std::size_t i = 0; i < train.size(); ++i) {
    const std::int64_t dt = train[i].features.n_tables - v.n_tables;
    const std::int64_t dc = train[i].features.n_columns - v.n_columns;
    by_distance.emplace_back(dt * dt + dc * dc, i);
  }
  const std::size_t take = std::min(k, by_distance.size());
  std::partial_sort(by_distance.begin(), by_distance.begin() + static_cast<std::ptrdiff_t>(take),
                    by_distance.end());

  std::array<std::size_t, kTierCount> votes{};
  for (std::size_t i = 0; i < take; ++i) ++votes[tier_index(train[by_distance[i].second].label)];

  Tier best = Tier::kBasic;
  for (Tier t : kAllTiers) {
    if (votes[tier_index(t)] > votes[tier_index(best)]) best = t;
  }
  RoutingDecision d;
  d.tier = best;
  d.router_name = "knn";
  return d;
}

/// Returns whether a pipeline can handle the query.
using BinaryClassifier = std::function<bool(const RouterQuery&, const LinkedSchema&)>;

/// Waterfall over cheapest-first binary classifiers: the first positive
/// verdict selects its tier, the most capable tier is the default.
/// Classifiers after the first positive are never invoked.
inline RoutingDecision cascade_route(std::span<const BinaryClassifier> classifiers,
                                     const RouterQuery& q, const LinkedSchema& linked) {
  if (classifiers.size() != kTierCount - 1) {
    throw Error(ErrorCode::kConfig, "cascade needs exactly " + std::to_string(kTierCount - 1) +
                                        " classifiers, got " + std::to_string(classifiers.size()));
  }
  RoutingDecision d;
  d.router_name = "cascade";
  d.tier = kAllTiers.back();
  for (std::size_t i = 0; i < classifiers.size(); ++i) {
    bool verdict = false;
    try {
      verdict = classifiers[i](q, linked);
    } catch (const std::exception& e) {
      throw Error(ErrorCode::kRouting, "cascade stage " + std::string(tier_name(kAllTiers[i])) +
                                           " failed: " + e.what());
    }
    if (verdict) {
      d.tier = kAllTiers[i];
      break;
    }
  }
  return d;
}

/// Argmax over tiers, exact ties to the cheaper tier.
inline RoutingDecision score_route(const ScoreMap& scores) {
  for (Tier t : kAllTiers) {
    if (!std::isfinite(scores[tier_index(t)])) {
      throw Error(ErrorCode::kScoring,
                  "non-finite score for " + std::string(tier_name(t)));
    }
  }
  Tier best = Tier::kBasic;
  for (Tier t : kAllTiers) {
    if (scores[tier_index(t)] > scores[tier_index(best)]) best = t;
  }
  RoutingDecision d;
  d.tier = best;
  d.scores = scores;
  d.router_name = "score";
  return d;
}

inline RoutingDecision oracle_route(Tier label) {
  RoutingDecision d;
  d.tier = label;
  d.router_name = "oracle";
  return d;
}

// ---------------------------------------------------------------------------
// Router objects used by the benchmark runner.

class Router {
 public:
  virtual ~Router() = default;
  virtual std::string name() const = 0;
  virtual RoutingDecision route(const RouterQuery& q, const LinkedSchema& linked) const = 0;
};

/// Always the same tier; the single-pipeline baselines.
class FixedRouter : public Router {
 public:
  explicit FixedRouter(Tier tier) : tier_(tier) {}
  std::string name() const override { return std::string(tier_name(tier_)); }
  RoutingDecision route(const RouterQuery&, const LinkedSchema&) const override {
    RoutingDecision d;
    d.tier = tier_;
    d.router_name = name();
    return d;
  }

 private:
  Tier tier_;
};

class KnnRouter : public Router {
 public:
  KnnRouter(std::vector<LabeledPoint> train, std::size_t k) : train_(std::move(train)), k_(k) {
    if (train_.empty()) throw Error(ErrorCode::kConfig, "KNN router has an empty training set");
    if (k_ == 0) throw Error(ErrorCode::kConfig, "KNN k must be >= 1");
  }
  std::string name() const override { return "knn"; }
  RoutingDecision route(const RouterQuery&, const LinkedSchema& linked) const override {
    return knn_route(build_features(linked), train_, k_);
  }

 private:
  std::vector<LabeledPoint> train_;
  std::size_t k_;
};

class CascadeRouter : public Router {
 public:
  explicit CascadeRouter(std::vector<BinaryClassifier> classifiers)
      : classifiers_(std::move(classifiers)) {
    if (classifiers_.size() != kTierCount - 1) {
      throw Error(ErrorCode::kConfig, "cascade needs exactly two classifiers");
    }
  }
  std::string name() const override { return "cascade"; }
  RoutingDecision route(const RouterQuery& q, const LinkedSchema& linked) const override {
    return cascade_route(classifiers_, q, linked);
  }

 private:
  std::vector<BinaryClassifier> classifiers_;
};

using ScoreFunction = std::function<ScoreMap(const RouterQuery&, const LinkedSchema&)>;

class ScoreRouter : public Router {
 public:
  ScoreRouter(std::string name, ScoreFunction scorer)
      : name_(std::move(name)), scorer_(std::move(scorer)) {}
  std::string name() const override { return name_; }
  RoutingDecision route(const RouterQuery& q, const LinkedSchema& linked) const override {
    RoutingDecision d = score_route(scorer_(q, linked));
    d.router_name = name_;
    return d;
  }

 private:
  std::string name_;
  ScoreFunction scorer_;
};

/// Replays stored oracle labels by query id.
class OracleRouter : public Router {
 public:
  explicit OracleRouter(std::map<std::string, Tier> labels) : labels_(std::move(labels)) {}
  std::string name() const override { return "oracle"; }
  RoutingDecision route(const RouterQuery& q, const LinkedSchema&) const override {
    const auto it = labels_.find(q.id);
    if (it == labels_.end()) {
      throw Error(ErrorCode::kRouting, "no oracle label for query " + q.id);
    }
    return oracle_route(it->second);
  }

 private:
  std::map<std::string, Tier> labels_;
};

}  // namespace tiersql
