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

#include "nlfeat/linear.hpp"

#include <cmath>

#include "gtest/gtest.h"
#include "nlfeat/eval.hpp"
#include "nlfeat/rng.hpp"
#include "test_util.hpp"

namespace nlfeat {
namespace {

constexpr double kSigmoid1 = 0.7310585786300048792512;

LinearModel make_model(std::vector<std::string> ids, std::vector<double> w, double b) {
  LinearModel m;
  m.task = "t";
  m.query_ids = std::move(ids);
  m.weights = std::move(w);
  m.intercept = b;
  return m;
}

FeatureMatrix matrix(std::size_t rows, std::vector<std::string> ids, std::vector<double> values) {
  std::vector<std::string> docs;
  for (std::size_t i = 0; i < rows; ++i) docs.push_back("d" + std::to_string(i));
  FeatureMatrix m(docs, std::move(ids));
  m.values = std::move(values);
  return m;
}

TEST(LossGradient, AtOriginIsHalfMinusLabelTimesFeature) {
  for (int y : {0, 1}) {
    const std::vector<double> x = {0.3, -1.2, 2.0};
    const DenseDesign d(x, 1, 3);
    const std::vector<int> labels = {y};
    std::vector<double> w(3, 0.0), gw(3);
    double gb = 0;
    loss_gradient(d, labels, w, 0.0, 1e-4, gw, gb);
    for (std::size_t j = 0; j < 3; ++j) EXPECT_DOUBLE_EQ(gw[j], (0.5 - y) * x[j]);
    EXPECT_DOUBLE_EQ(gb, 0.5 - y);
  }
}

TEST(LossGradient, MatchesCentralFiniteDifferences) {
  Rng rng(2024);
  constexpr double h = 1e-6;
  for (int draw = 0; draw < 50; ++draw) {
    const std::size_t rows = 1 + rng.below(20);
    const std::size_t cols = 1 + rng.below(6);
    std::vector<double> x(rows * cols);
    for (auto& v : x) v = rng.uniform();
    std::vector<int> y(rows);
    for (auto& v : y) v = rng.bernoulli(0.5) ? 1 : 0;
    std::vector<double> w(cols);
    for (auto& v : w) v = 4.0 * rng.uniform() - 2.0;
    const double b = 2.0 * rng.uniform() - 1.0;
    const double l2 = 0.1 * rng.uniform();
    const DenseDesign d(x, rows, cols);
    std::vector<double> gw(cols);
    double gb = 0;
    loss_gradient(d, y, w, b, l2, gw, gb);
    auto rel = [](double a, double n) { return std::abs(a - n) / std::max(1e-8, std::max(std::abs(a), std::abs(n))); };
    for (std::size_t j = 0; j < cols; ++j) {
      auto wp = w, wm = w;
      wp[j] += h;
      wm[j] -= h;
      const double fd = (regularized_loss(d, y, wp, b, l2) - regularized_loss(d, y, wm, b, l2)) / (2 * h);
      EXPECT_LT(rel(gw[j], fd), 1e-5) << "draw " << draw << " coord " << j;
    }
    const double fdb = (regularized_loss(d, y, w, b + h, l2) - regularized_loss(d, y, w, b - h, l2)) / (2 * h);
    EXPECT_LT(rel(gb, fdb), 1e-5) << "draw " << draw;
  }
}

TEST(Train, RecoversSeparableFeature) {
  std::vector<double> x;
  std::vector<int> y;
  for (int i = 0; i < 100; ++i) {
    y.push_back(i % 3 == 0 ? 1 : 0);
    x.push_back(y.back());
  }
  const auto m = train(matrix(100, {"f"}, x), y, TrainConfig{});
  EXPECT_GT(m.weights[0], 0.0);
  const auto p = predict_proba(m, matrix(100, {"f"}, x));
  EXPECT_EQ(auroc(p, y), 1.0);
}

TEST(Train, ConstantFeatureFallsBackToBaseRate) {
  // Intercept-only optimum: b* = logit(positive rate).
  const int n = 2000;
  std::vector<int> y(n);
  for (int i = 0; i < n; ++i) y[i] = (i % 10 < 3) ? 1 : 0;
  const double rate = 0.3;
  const auto m = train(matrix(n, {"c"}, std::vector<double>(n, 0.5)), y, TrainConfig{});
  const double p = predict_proba(m, FeatureRow{{"c", 0.5}});
  // SGD with the default tolerance stops near, not at, the optimum.
  EXPECT_NEAR(p, rate, 0.03);
  const double b_star = std::log(rate / (1 - rate));
  EXPECT_NEAR(m.intercept + 0.5 * m.weights[0], b_star, 0.15);
  // The penalty keeps the redundant weight well below the intercept.
  EXPECT_LT(std::abs(m.weights[0]), std::abs(m.intercept));
}

TEST(Train, RejectsSingleClassAndNonFinite) {
  EXPECT_THROW(train(matrix(3, {"f"}, {0.1, 0.2, 0.3}), std::vector<int>{1, 1, 1}, TrainConfig{}), DataError);
  EXPECT_THROW(train(matrix(2, {"f"}, {0.1, std::nan("")}), std::vector<int>{0, 1}, TrainConfig{}), DataError);
}

struct RandomProblem {
  FeatureMatrix x;
  std::vector<int> y;
};

RandomProblem random_problem(std::uint64_t seed, std::size_t rows = 200, std::size_t cols = 5) {
  Rng rng(seed);
  std::vector<std::string> ids;
  for (std::size_t j = 0; j < cols; ++j) ids.push_back("q" + std::to_string(j));
  std::vector<double> v(rows * cols);
  for (auto& e : v) e = rng.uniform();
  std::vector<int> y(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    const double z = 3 * v[i * cols] - 2 * v[i * cols + 1] + 0.5;
    y[i] = rng.bernoulli(sigmoid(z)) ? 1 : 0;
  }
  return {matrix(rows, ids, v), y};
}

TEST(Train, SeedDeterminism) {
  const auto p = random_problem(5);
  TrainConfig cfg;
  cfg.seed = 17;
  const auto a = train(p.x, p.y, cfg);
  const auto b = train(p.x, p.y, cfg);
  EXPECT_EQ(a, b);
  cfg.seed = 18;
  EXPECT_NE(train(p.x, p.y, cfg).weights, a.weights);
}

TEST(Train, ColumnPermutationPermutesWeights) {
  const auto p = random_problem(6);
  const auto base = train(p.x, p.y, TrainConfig{});
  const std::vector<std::string> perm = {"q3", "q0", "q4", "q2", "q1"};
  const auto m = train(p.x.select_columns(perm), p.y, TrainConfig{});
  EXPECT_EQ(m.intercept, base.intercept);
  for (std::size_t j = 0; j < perm.size(); ++j) {
    EXPECT_EQ(m.weights[j], base.weights[*base.index_of(perm[j])]);
  }
}

TEST(PredictProba, Examples) {
  EXPECT_EQ(predict_proba(make_model({"a"}, {0.0}, 0.0), FeatureRow{{"a", 123.0}}), 0.5);
  EXPECT_EQ(predict_proba(make_model({"a"}, {2.0}, -1.0), FeatureRow{{"a", 0.5}}), 0.5);
  EXPECT_DOUBLE_EQ(predict_proba(make_model({"a", "b"}, {1.0, 1.0}, 0.0), FeatureRow{{"a", 0.75}, {"b", 0.25}}),
                   kSigmoid1);
}

TEST(PredictProba, AlignsByIdNotPosition) {
  const auto m = make_model({"a", "b"}, {1.0, -1.0}, 0.0);
  const auto f = matrix(1, {"b", "a"}, {0.0, 1.0});
  EXPECT_DOUBLE_EQ(predict_proba(m, f)[0], kSigmoid1);
  EXPECT_THROW(predict_proba(m, matrix(1, {"a"}, {1.0})), DataError);
}

TEST(Explain, SortedScoresAndProbability) {
  const auto e = explain(make_model({"q1", "q2"}, {2.0, -1.0}, 0.0), FeatureRow{{"q1", 0.9}, {"q2", 0.8}});
  ASSERT_EQ(e.contributions.size(), 2u);
  EXPECT_EQ(e.contributions[0].query_id, "q1");
  EXPECT_DOUBLE_EQ(e.contributions[0].score, 1.8);
  EXPECT_EQ(e.contributions[1].query_id, "q2");
  EXPECT_DOUBLE_EQ(e.contributions[1].score, -0.8);
  EXPECT_NEAR(e.predicted_probability, kSigmoid1, 1e-15);
}

TEST(Explain, ZeroFeaturesAndSingleFeature) {
  const auto zero = explain(make_model({"a", "b"}, {3.0, -2.0}, -0.7), FeatureRow{{"a", 0.0}, {"b", 0.0}});
  for (const auto& c : zero.contributions) EXPECT_EQ(c.score, 0.0);
  EXPECT_EQ(zero.predicted_probability, sigmoid(-0.7));
  const auto one = explain(make_model({"a"}, {2.0}, -0.25), FeatureRow{{"a", 0.5}});
  EXPECT_EQ(one.logit - one.intercept, one.contributions[0].score);
}

TEST(Explain, InvariantHoldsOnRandomModels) {
  Rng rng(9);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.below(12);
    LinearModel m;
    FeatureRow row;
    for (std::size_t j = 0; j < n; ++j) {
      m.query_ids.push_back("q" + std::to_string(j));
      m.weights.push_back(6 * rng.uniform() - 3);
      row[m.query_ids.back()] = rng.uniform();
    }
    m.intercept = 2 * rng.uniform() - 1;
    const auto e = explain(m, row);
    double sum = e.intercept;
    for (const auto& c : e.contributions) sum += c.score;
    EXPECT_NEAR(e.predicted_probability, sigmoid(sum), 1e-12);
    for (std::size_t i = 1; i < e.contributions.size(); ++i) {
      EXPECT_GE(e.contributions[i - 1].score, e.contributions[i].score);
    }
  }
}

TEST(Prune, DropNothingIsIdentity) {
  const auto m = make_model({"a", "b"}, {0.3, -0.1}, 0.2);
  EXPECT_EQ(prune(m, {}, false), m);
}

TEST(Prune, DropAllLeavesIntercept) {
  const auto m = make_model({"a", "b"}, {0.3, -0.1}, 0.2);
  const auto p = prune(m, {"a", "b"}, false);
  EXPECT_EQ(p.weights, (std::vector<double>{0.0, 0.0}));
  EXPECT_EQ(predict_proba(p, FeatureRow{{"a", 0.9}, {"b", 0.1}}), sigmoid(0.2));
  EXPECT_NE(p.train_fingerprint, m.train_fingerprint);
}

TEST(Prune, UnknownIdAndRetrainRequirements) {
  const auto m = make_model({"a"}, {1.0}, 0.0);
  EXPECT_THROW(prune(m, {"zzz"}, false), DataError);
  EXPECT_THROW(prune(m, {"a"}, true), DataError);
}

TEST(Prune, LogitDropsByExactlyTheRemovedScore) {
  Rng rng(77);
  for (int trial = 0; trial < 100; ++trial) {
    LinearModel m;
    const std::size_t n = 2 + rng.below(6);
    for (std::size_t j = 0; j < n; ++j) {
      m.query_ids.push_back("q" + std::to_string(j));
      m.weights.push_back(4 * rng.uniform() - 2);
    }
    m.intercept = rng.uniform() - 0.5;
    const std::size_t drop = rng.below(n);
    const auto pruned = prune(m, {m.query_ids[drop]}, false);
    FeatureMatrix f = matrix(1, m.query_ids, {});
    for (std::size_t j = 0; j < n; ++j) f.values.push_back(rng.uniform());
    const double before = predict_logit(m, f)[0];
    const double after = predict_logit(pruned, f)[0];
    EXPECT_NEAR(before - after, m.weights[drop] * f.values[drop], 1e-12);
    const auto eb = explain(m, feature_row(f, 0));
    const auto ea = explain(pruned, feature_row(f, 0));
    for (const auto& c : ea.contributions) {
      if (c.query_id == m.query_ids[drop]) {
        EXPECT_EQ(c.score, 0.0);
        continue;
      }
      auto it = std::find_if(eb.contributions.begin(), eb.contributions.end(),
                             [&](const Contribution& o) { return o.query_id == c.query_id; });
      EXPECT_EQ(it->score, c.score);
    }
  }
}

TEST(Prune, RetrainFitsRemainingColumns) {
  const auto p = random_problem(8);
  const auto m = train(p.x, p.y, TrainConfig{});
  const auto r = prune(m, {"q1"}, true, RetrainInputs{p.x, p.y, TrainConfig{}});
  EXPECT_EQ(r.query_ids, (std::vector<std::string>{"q0", "q2", "q3", "q4"}));
  EXPECT_EQ(r.weights, train(p.x.select_columns(r.query_ids), p.y, TrainConfig{}).weights);
}

TEST(ModelFile, JsonRoundTrip) {
  ::nlfeat::testing::TempDir dir;
  const auto p = random_problem(10);
  auto m = train(p.x, p.y, TrainConfig{}, "readmission");
  save_model(m, dir.path() / "m.json");
  EXPECT_EQ(load_model(dir.path() / "m.json"), m);
  EXPECT_EQ(m.config["version"], kTrainerVersion);
  EXPECT_FALSE(m.train_fingerprint.empty());
}

}  // namespace
}  // namespace nlfeat
