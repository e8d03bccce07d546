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

#ifndef NLFEAT_EVAL_HPP_
#define NLFEAT_EVAL_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "nlfeat/error.hpp"
#include "nlfeat/rng.hpp"

namespace nlfeat {

using json = nlohmann::json;

// Probability that a random positive outranks a random negative, ties worth
// one half. Sort-based, O(n log n). The accumulated pair count is a multiple
// of 1/2 well below 2^53, so it is exact.
inline double auroc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw DataError("auroc: scores and labels differ in length");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double pairs = 0.0;
  double negatives_below = 0.0;
  double positives = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    double pos = 0.0;
    double neg = 0.0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      if (labels[order[j]]) {
        pos += 1.0;
      } else {
        neg += 1.0;
      }
      ++j;
    }
    pairs += pos * negatives_below + 0.5 * pos * neg;
    negatives_below += neg;
    positives += pos;
    i = j;
  }
  if (positives == 0.0 || negatives_below == 0.0) {
    throw IllDefinedError("AUROC needs at least one positive and one negative label");
  }
  return pairs / (positives * negatives_below);
}

inline std::optional<double> try_auroc(std::span<const double> scores, std::span<const int> labels) {
  try {
    return auroc(scores, labels);
  } catch (const IllDefinedError&) {
    return std::nullopt;
  }
}

struct ClassificationMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// Degenerate cases are scored 0: no positive predictions -> precision 0, no
// positive labels -> recall 0, P + R = 0 -> F1 0.
inline ClassificationMetrics classification_metrics(std::span<const int> preds, std::span<const int> labels) {
  if (preds.size() != labels.size()) throw DataError("classification_metrics: length mismatch");
  double tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i] && labels[i]) tp += 1;
    if (preds[i] && !labels[i]) fp += 1;
    if (!preds[i] && labels[i]) fn += 1;
  }
  ClassificationMetrics m;
  m.precision = tp + fp > 0 ? tp / (tp + fp) : 0.0;
  m.recall = tp + fn > 0 ? tp / (tp + fn) : 0.0;
  m.f1 = m.precision + m.recall > 0 ? 2 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
  return m;
}

inline const std::vector<int>& default_ks() {
  static const std::vector<int> kKs = {1, 5, 10, 20};
  return kKs;
}

struct RankingAlignment {
  std::vector<std::string> ranked_ids;      // coefficient descending, ties by id
  std::vector<std::pair<int, double>> precision_at;  // (k, P@k)
  std::optional<double> auc;               // absent when ill-defined
};

// P@k divides by min(k, N), so a fully relevant list scores 1 at every k.
inline RankingAlignment ranking_alignment(const std::vector<std::pair<std::string, double>>& coefficients,
                                          const std::set<std::string>& relevant,
                                          const std::vector<int>& ks = default_ks()) {
  std::set<std::string> ids;
  for (const auto& [id, _] : coefficients) {
    if (!ids.insert(id).second) throw DataError("ranking_alignment: duplicate id '" + id + "'");
  }
  for (const auto& r : relevant) {
    if (!ids.count(r)) throw DataError("ranking_alignment: relevant id '" + r + "' has no coefficient");
  }
  auto sorted = coefficients;
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  RankingAlignment out;
  for (const auto& [id, _] : sorted) out.ranked_ids.push_back(id);
  for (int k : ks) {
    if (k <= 0) throw DataError("ranking_alignment: k must be positive");
    const std::size_t depth = std::min<std::size_t>(static_cast<std::size_t>(k), sorted.size());
    std::size_t hits = 0;
    for (std::size_t i = 0; i < depth; ++i) hits += relevant.count(sorted[i].first);
    out.precision_at.emplace_back(k, depth ? static_cast<double>(hits) / static_cast<double>(depth) : 0.0);
  }
  std::vector<double> scores;
  std::vector<int> labels;
  for (const auto& [id, c] : coefficients) {
    scores.push_back(c);
    labels.push_back(relevant.count(id) ? 1 : 0);
  }
  out.auc = try_auroc(scores, labels);
  return out;
}

// H(softmax(|w|)) in nats, computed as logsumexp(a) - sum_i p_i a_i.
inline double coefficient_entropy(std::span<const double> weights) {
  if (weights.empty()) throw DataError("coefficient_entropy: no weights");
  double max_abs = 0.0;
  for (double w : weights) max_abs = std::max(max_abs, std::abs(w));
  double z = 0.0;
  for (double w : weights) z += std::exp(std::abs(w) - max_abs);
  double expected = 0.0;
  for (double w : weights) {
    const double a = std::abs(w) - max_abs;
    expected += std::exp(a) / z * a;
  }
  return std::max(0.0, std::log(z) - expected);
}

struct BootstrapInterval {
  double low = 0.0;
  double high = 0.0;
  std::size_t valid = 0;
  std::size_t skipped = 0;
};

// A statistic over a multiset of sample indices; nullopt when undefined on
// that resample (e.g. AUROC with one class).
using IndexStatistic = std::function<std::optional<double>(std::span<const std::size_t>)>;

// Linear-interpolated empirical quantile of sorted values.
inline double sorted_quantile(const std::vector<double>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + (sorted[hi] - sorted[lo]) * frac;
}

// Nonparametric percentile bootstrap, 95%.
inline BootstrapInterval bootstrap_ci(const IndexStatistic& statistic, std::size_t n,
                                      std::size_t resamples = 1000, std::uint64_t seed = 0) {
  if (n == 0) throw DataError("bootstrap_ci: no samples");
  if (resamples == 0) throw DataError("bootstrap_ci: resamples must be positive");
  Rng rng(mix_seed(seed, 0xb007));
  std::vector<std::size_t> idx(n);
  std::vector<double> values;
  values.reserve(resamples);
  BootstrapInterval out;
  for (std::size_t b = 0; b < resamples; ++b) {
    for (auto& i : idx) i = static_cast<std::size_t>(rng.below(n));
    if (auto v = statistic(idx)) {
      values.push_back(*v);
    } else {
      ++out.skipped;
    }
  }
  out.valid = values.size();
  if (out.skipped * 2 > resamples) {
    throw IllDefinedError("bootstrap: " + std::to_string(out.skipped) + " of " + std::to_string(resamples) +
                          " resamples were ill-defined");
  }
  std::sort(values.begin(), values.end());
  out.low = sorted_quantile(values, 0.025);
  out.high = sorted_quantile(values, 0.975);
  return out;
}

// Bootstrap of AUROC over resampled (score, label) pairs.
inline BootstrapInterval auroc_bootstrap(std::span<const double> scores, std::span<const int> labels,
                                         std::size_t resamples = 1000, std::uint64_t seed = 0) {
  std::vector<double> s;
  std::vector<int> l;
  return bootstrap_ci(
      [&](std::span<const std::size_t> idx) {
        s.clear();
        l.clear();
        for (auto i : idx) {
          s.push_back(scores[i]);
          l.push_back(labels[i]);
        }
        return try_auroc(s, l);
      },
      scores.size(), resamples, seed);
}

struct MetricReport {
  std::string metric;
  std::string name;  // system/variant/query the number belongs to
  std::string task;
  std::optional<double> point_estimate;  // absent when ill-defined
  std::optional<double> ci_low;
  std::optional<double> ci_high;
  std::size_t n = 0;
  std::vector<MetricReport> per_label;
  std::string note;

  bool ill_defined() const { return !point_estimate.has_value(); }
};

inline json report_to_json(const MetricReport& r) {
  auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  json j = {{"metric", r.metric},
            {"name", r.name},
            {"task", r.task},
            {"point_estimate", opt(r.point_estimate)},
            {"ci_low", opt(r.ci_low)},
            {"ci_high", opt(r.ci_high)},
            {"n", r.n}};
  if (!r.per_label.empty()) {
    json labels = json::array();
    for (const auto& p : r.per_label) labels.push_back(report_to_json(p));
    j["per_label"] = labels;
  }
  if (!r.note.empty()) j["note"] = r.note;
  return j;
}

// Unweighted mean over the well-defined labels; ill-defined labels stay in
// per_label and are counted in the note.
inline MetricReport macro_average(const std::vector<MetricReport>& reports) {
  if (reports.empty()) throw DataError("macro_average: no label reports");
  MetricReport out;
  out.metric = reports.front().metric;
  out.name = reports.front().name;
  out.per_label = reports;
  double sum = 0.0;
  std::size_t used = 0;
  std::size_t omitted = 0;
  for (const auto& r : reports) {
    out.n = std::max(out.n, r.n);
    if (r.point_estimate) {
      sum += *r.point_estimate;
      ++used;
    } else {
      ++omitted;
    }
  }
  if (used > 0) out.point_estimate = sum / static_cast<double>(used);
  if (omitted > 0) {
    out.note = std::to_string(omitted) + " ill-defined label(s) excluded from the mean";
  }
  return out;
}

// Trapezoid area under a curve given as strictly increasing x.
inline double trapezoid_area(std::span<const double> x, std::span<const double> y) {
  double area = 0.0;
  for (std::size_t i = 1; i < x.size(); ++i) area += 0.5 * (x[i] - x[i - 1]) * (y[i] + y[i - 1]);
  return area;
}

// Spearman rank correlation with average ranks for ties.
inline double spearman(std::span<const double> a, std::span<const double> b) {
  auto ranks = [](std::span<const double> v) {
    std::vector<std::size_t> order(v.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](auto i, auto j) { return v[i] < v[j]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < order.size();) {
      std::size_t j = i;
      while (j < order.size() && v[order[j]] == v[order[i]]) ++j;
      const double avg = 0.5 * static_cast<double>(i + j - 1) + 1.0;
      for (std::size_t k = i; k < j; ++k) r[order[k]] = avg;
      i = j;
    }
    return r;
  };
  if (a.size() != b.size() || a.size() < 2) throw DataError("spearman: need two equal-length series");
  const auto ra = ranks(a);
  const auto rb = ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double num = 0, da = 0, db = 0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    num += (ra[i] - ma) * (rb[i] - mb);
    da += (ra[i] - ma) * (ra[i] - ma);
    db += (rb[i] - mb) * (rb[i] - mb);
  }
  if (da == 0 || db == 0) return 0.0;
  return num / std::sqrt(da * db);
}

}  // namespace nlfeat

#endif  // NLFEAT_EVAL_HPP_
