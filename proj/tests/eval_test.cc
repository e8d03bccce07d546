/*
 * Copyright 2026 The nlfeat Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "nlfeat/eval.hpp"

#include <cmath>

#include "gtest/gtest.h"
#include "nlfeat/rng.hpp"

namespace nlfeat {
namespace {

// Reference values from a 40-digit evaluation.
constexpr double kLn4 = 1.386294361119890618834;
constexpr double kEntropy10_0 = 0.0004993775862412085918;

// O(n^2) Mann-Whitney count with half credit for ties.
double pairwise_auroc(const std::vector<double>& s, const std::vector<int>& y) {
  double wins = 0, pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!y[i]) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[j]) continue;
      pairs += 1;
      if (s[i] > s[j]) {
        wins += 1;
      } else if (s[i] == s[j]) {
        wins += 0.5;
      }
    }
  }
  return wins / pairs;
}

TEST(Auroc, Examples) {
  EXPECT_EQ(auroc(std::vector{0.9, 0.8, 0.2}, std::vector{1, 1, 0}), 1.0);
  EXPECT_EQ(auroc(std::vector{0.2, 0.8}, std::vector{1, 0}), 0.0);
  EXPECT_EQ(auroc(std::vector{0.5, 0.5, 0.5, 0.5}, std::vector{1, 0, 1, 0}), 0.5);
}

TEST(Auroc, SingleClassIsIllDefined) {
  EXPECT_THROW(auroc(std::vector{0.1, 0.2}, std::vector{1, 1}), IllDefinedError);
  EXPECT_FALSE(try_auroc(std::vector{0.1}, std::vector{0}).has_value());
}

TEST(Auroc, MatchesPairwiseOracleWithTies) {
  Rng rng(31);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 2 + rng.below(60);
    std::vector<double> s(n);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = static_cast<double>(rng.below(8)) / 4.0;  // heavy ties
      y[i] = rng.bernoulli(0.4) ? 1 : 0;
    }
    y[0] = 1;
    y[1] = 0;
    EXPECT_EQ(auroc(s, y), pairwise_auroc(s, y));
  }
}

TEST(Auroc, InvariantUnderMonotoneTransformAndComplement) {
  Rng rng(32);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + rng.below(40);
    std::vector<double> s(n), t(n);
    std::vector<int> y(n), flipped(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = std::round(rng.uniform() * 10) / 10;
      t[i] = std::exp(3 * s[i]) - 7;
      y[i] = rng.bernoulli(0.5) ? 1 : 0;
    }
    y[0] = 1;
    y[1] = 0;
    for (std::size_t i = 0; i < n; ++i) flipped[i] = 1 - y[i];
    EXPECT_EQ(auroc(s, y), auroc(t, y));
    EXPECT_EQ(auroc(s, y) + auroc(s, flipped), 1.0);
  }
}

TEST(ClassificationMetrics, Examples) {
  auto m = classification_metrics(std::vector{1, 1, 0}, std::vector{1, 0, 0});
  EXPECT_EQ(m.precision, 0.5);
  EXPECT_EQ(m.recall, 1.0);
  EXPECT_DOUBLE_EQ(m.f1, 2.0 / 3.0);
  m = classification_metrics(std::vector{0, 0, 0}, std::vector{1, 0, 1});
  EXPECT_EQ(m.precision, 0.0);
  EXPECT_EQ(m.f1, 0.0);
  m = classification_metrics(std::vector{1, 0, 1}, std::vector{1, 0, 1});
  EXPECT_EQ(m.precision, 1.0);
  EXPECT_EQ(m.recall, 1.0);
  EXPECT_EQ(m.f1, 1.0);
  m = classification_metrics(std::vector{1, 0}, std::vector{0, 0});
  EXPECT_EQ(m.recall, 0.0);
  EXPECT_EQ(m.f1, 0.0);
}

TEST(RankingAlignment, WorkedExample) {
  const auto r = ranking_alignment({{"q1", 3}, {"q2", 2}, {"q3", 1}, {"q4", -1}}, {"q1", "q3"}, {1, 2});
  EXPECT_EQ(r.precision_at[0], (std::pair<int, double>{1, 1.0}));
  EXPECT_EQ(r.precision_at[1], (std::pair<int, double>{2, 0.5}));
  ASSERT_TRUE(r.auc.has_value());
  EXPECT_EQ(*r.auc, 0.75);
}

TEST(RankingAlignment, AllRelevantAndLastRanked) {
  const auto all = ranking_alignment({{"a", 1}, {"b", 2}, {"c", 0}}, {"a", "b", "c"});
  for (const auto& [k, p] : all.precision_at) EXPECT_EQ(p, 1.0) << k;
  EXPECT_FALSE(all.auc.has_value());
  const auto last = ranking_alignment({{"a", 5}, {"b", 4}, {"c", 3}, {"d", 2}, {"e", 1}}, {"e"}, {1});
  EXPECT_EQ(last.precision_at[0].second, 0.0);
  EXPECT_EQ(*last.auc, 0.0);
}

TEST(RankingAlignment, EmptyRelevantOmitsAuc) {
  const auto r = ranking_alignment({{"a", 1}, {"b", 2}}, {}, {1});
  EXPECT_EQ(r.precision_at[0].second, 0.0);
  EXPECT_FALSE(r.auc.has_value());
}

TEST(RankingAlignment, TiesBreakById) {
  const auto r = ranking_alignment({{"b", 1}, {"a", 1}, {"c", 2}}, {"a"}, {2});
  EXPECT_EQ(r.ranked_ids, (std::vector<std::string>{"c", "a", "b"}));
  EXPECT_EQ(r.precision_at[0].second, 0.5);
}

TEST(CoefficientEntropy, Examples) {
  EXPECT_NEAR(coefficient_entropy(std::vector{1.0, -1.0, 1.0, 1.0}), kLn4, 1e-12);
  EXPECT_NEAR(coefficient_entropy(std::vector{10.0, 0.0}), kEntropy10_0, 1e-15);
  EXPECT_EQ(coefficient_entropy(std::vector{5.0}), 0.0);
}

TEST(CoefficientEntropy, BoundedByLogN) {
  Rng rng(41);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 1 + rng.below(50);
    std::vector<double> w(n);
    for (auto& v : w) v = 10 * rng.uniform() - 5;
    const double h = coefficient_entropy(w);
    EXPECT_GE(h, 0.0);
    EXPECT_LE(h, std::log(static_cast<double>(n)) + 1e-9);
    const double mag = 3 * rng.uniform();
    std::vector<double> eq(n);
    for (std::size_t i = 0; i < n; ++i) eq[i] = (i % 2 ? -mag : mag);
    EXPECT_NEAR(coefficient_entropy(eq), std::log(static_cast<double>(n)), 1e-9);
  }
}

TEST(Bootstrap, ConstantStatistic) {
  const auto ci = bootstrap_ci([](std::span<const std::size_t>) { return std::optional<double>(0.5); }, 10);
  EXPECT_EQ(ci.low, 0.5);
  EXPECT_EQ(ci.high, 0.5);
  EXPECT_EQ(ci.valid, 1000u);
}

struct Sim {
  std::vector<double> s;
  std::vector<int> y;
};

Sim simulate(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  Sim out;
  for (std::size_t i = 0; i < n; ++i) {
    const int y = rng.bernoulli(0.5) ? 1 : 0;
    out.y.push_back(y);
    out.s.push_back(rng.normal() + (y ? 1.0 : 0.0));
  }
  return out;
}

TEST(Bootstrap, DeterministicPerSeed) {
  const auto sim = simulate(100, 1);
  const auto a = auroc_bootstrap(sim.s, sim.y, 1000, 5);
  const auto b = auroc_bootstrap(sim.s, sim.y, 1000, 5);
  EXPECT_EQ(a.low, b.low);
  EXPECT_EQ(a.high, b.high);
  EXPECT_LE(a.low, auroc(sim.s, sim.y));
  EXPECT_GE(a.high, auroc(sim.s, sim.y));
}

TEST(Bootstrap, WidthShrinksWithSampleSize) {
  for (std::uint64_t run = 0; run < 5; ++run) {
    const auto small = simulate(50, 100 + run);
    const auto large = simulate(500, 200 + run);
    const auto ws = auroc_bootstrap(small.s, small.y, 1000, run);
    const auto wl = auroc_bootstrap(large.s, large.y, 1000, run);
    EXPECT_LT(wl.high - wl.low, ws.high - ws.low) << "run " << run;
  }
}

TEST(Bootstrap, MostlyIllDefinedFails) {
  // Defined only when index 0 is drawn first: about 1 resample in 10.
  const IndexStatistic stat = [](std::span<const std::size_t> idx) {
    return idx[0] == 0 ? std::optional<double>(1.0) : std::nullopt;
  };
  EXPECT_THROW(bootstrap_ci(stat, 10, 1000, 1), IllDefinedError);
}

TEST(Bootstrap, CountsSkippedResamples) {
  std::vector<double> s = {0.1, 0.2, 0.3, 0.4};
  std::vector<int> y = {1, 0, 0, 0};
  const auto ci = auroc_bootstrap(s, y, 1000, 1);
  EXPECT_GT(ci.skipped, 0u);
  EXPECT_EQ(ci.skipped + ci.valid, 1000u);
}

TEST(MacroAverage, Examples) {
  MetricReport a{"auroc", "m", "x", 0.8};
  MetricReport b{"auroc", "m", "y", 0.6};
  EXPECT_DOUBLE_EQ(*macro_average({a, b}).point_estimate, 0.7);
  EXPECT_EQ(*macro_average({a}).point_estimate, 0.8);
  MetricReport bad{"auroc", "m", "z", std::nullopt};
  const auto m = macro_average({a, bad, b});
  EXPECT_DOUBLE_EQ(*m.point_estimate, 0.7);
  EXPECT_EQ(m.per_label.size(), 3u);
  EXPECT_TRUE(m.per_label[1].ill_defined());
  EXPECT_EQ(m.note, "1 ill-defined label(s) excluded from the mean");
  EXPECT_THROW(macro_average({}), DataError);
}

TEST(Spearman, PerfectAndReversed) {
  EXPECT_DOUBLE_EQ(spearman(std::vector{1.0, 2.0, 3.0}, std::vector{10.0, 20.0, 30.0}), 1.0);
  EXPECT_DOUBLE_EQ(spearman(std::vector{1.0, 2.0, 3.0}, std::vector{3.0, 2.0, 1.0}), -1.0);
}

}  // namespace
}  // namespace nlfeat
