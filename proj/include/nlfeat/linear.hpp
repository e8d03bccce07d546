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

#ifndef NLFEAT_LINEAR_HPP_
#define NLFEAT_LINEAR_HPP_

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <filesystem>
#include <fstream>
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
#include "nlfeat/feature_matrix.hpp"
#include "nlfeat/hash.hpp"
#include "nlfeat/rng.hpp"

namespace nlfeat {

inline constexpr const char* kTrainerVersion = "sgd-logistic-v1";

inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// log(1 + exp(x)) without overflow.
inline double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

// Optimizer settings. The defaults mirror the usual SGD-classifier defaults
// (l2 1e-4, at most 1000 epochs, tol 1e-3 with 5 epochs of patience,
// shuffled epochs, "optimal" inverse-scaling step size).
struct TrainConfig {
  double l2_strength = 1e-4;
  int epochs = 1000;
  double tolerance = 1e-3;
  int n_iter_no_change = 5;
  std::uint64_t seed = 0;
  bool shuffle_each_epoch = true;
  bool fit_intercept = true;

  json to_json() const {
    return {{"version", kTrainerVersion},
            {"l2_strength", l2_strength},
            {"epochs", epochs},
            {"tolerance", tolerance},
            {"n_iter_no_change", n_iter_no_change},
            {"learning_rate_schedule", "inverse-scaling"},
            {"seed", seed},
            {"shuffle_each_epoch", shuffle_each_epoch},
            {"fit_intercept", fit_intercept}};
  }

  static TrainConfig from_json(const json& j) {
    TrainConfig c;
    c.l2_strength = j.value("l2_strength", c.l2_strength);
    c.epochs = j.value("epochs", c.epochs);
    c.tolerance = j.value("tolerance", c.tolerance);
    c.n_iter_no_change = j.value("n_iter_no_change", c.n_iter_no_change);
    c.seed = j.value("seed", c.seed);
    c.shuffle_each_epoch = j.value("shuffle_each_epoch", c.shuffle_each_epoch);
    c.fit_intercept = j.value("fit_intercept", c.fit_intercept);
    c.validate();
    return c;
  }

  void validate() const {
    if (!(l2_strength >= 0.0) || !std::isfinite(l2_strength)) throw DataError("l2_strength must be >= 0");
    if (epochs <= 0) throw DataError("epochs must be positive");
    if (n_iter_no_change <= 0) throw DataError("n_iter_no_change must be positive");
  }
};

// Row-access interface the trainer needs from a design matrix.
template <class D>
concept Design = requires(const D& d, std::size_t i, std::span<const double> w, std::span<double> out) {
  { d.rows() } -> std::convertible_to<std::size_t>;
  { d.cols() } -> std::convertible_to<std::size_t>;
  { d.dot(i, w) } -> std::convertible_to<double>;
  d.add_scaled(i, 1.0, out);
};

class DenseDesign {
 public:
  DenseDesign(std::span<const double> values, std::size_t rows, std::size_t cols)
      : values_(values), rows_(rows), cols_(cols) {
    if (values.size() != rows * cols) throw DataError("dense design: size mismatch");
  }
  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::span<const double> row(std::size_t i) const { return values_.subspan(i * cols_, cols_); }
  double dot(std::size_t i, std::span<const double> w) const {
    const auto r = row(i);
    double s = 0.0;
    for (std::size_t j = 0; j < cols_; ++j) s += r[j] * w[j];
    return s;
  }
  void add_scaled(std::size_t i, double a, std::span<double> out) const {
    const auto r = row(i);
    for (std::size_t j = 0; j < cols_; ++j) out[j] += a * r[j];
  }

 private:
  std::span<const double> values_;
  std::size_t rows_;
  std::size_t cols_;
};

using SparseRow = std::vector<std::pair<std::uint32_t, double>>;

class SparseDesign {
 public:
  SparseDesign(std::vector<SparseRow> rows, std::size_t cols) : rows_(std::move(rows)), cols_(cols) {}
  std::size_t rows() const { return rows_.size(); }
  std::size_t cols() const { return cols_; }
  const SparseRow& row(std::size_t i) const { return rows_[i]; }
  double dot(std::size_t i, std::span<const double> w) const {
    double s = 0.0;
    for (const auto& [j, v] : rows_[i]) s += v * w[j];
    return s;
  }
  void add_scaled(std::size_t i, double a, std::span<double> out) const {
    for (const auto& [j, v] : rows_[i]) out[j] += a * v;
  }

 private:
  std::vector<SparseRow> rows_;
  std::size_t cols_;
};

// L(w,b) = (1/M) sum_i log(1 + exp(-s_i (w.x_i + b))) + l2 * |w|^2, s_i = 2y_i - 1.
template <Design D>
double regularized_loss(const D& x, std::span<const int> labels, std::span<const double> w, double b,
                        double l2) {
  double sum = 0.0;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const double s = labels[i] ? 1.0 : -1.0;
    sum += softplus(-s * (x.dot(i, w) + b));
  }
  double sq = 0.0;
  for (double v : w) sq += v * v;
  return sum / static_cast<double>(x.rows()) + l2 * sq;
}

// Analytic gradient of regularized_loss.
template <Design D>
void loss_gradient(const D& x, std::span<const int> labels, std::span<const double> w, double b, double l2,
                   std::span<double> grad_w, double& grad_b) {
  std::fill(grad_w.begin(), grad_w.end(), 0.0);
  grad_b = 0.0;
  const double inv_m = 1.0 / static_cast<double>(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const double residual = (sigmoid(x.dot(i, w) + b) - static_cast<double>(labels[i])) * inv_m;
    x.add_scaled(i, residual, grad_w);
    grad_b += residual;
  }
  for (std::size_t j = 0; j < w.size(); ++j) grad_w[j] += 2.0 * l2 * w[j];
}

struct SgdResult {
  std::vector<double> weights;
  double intercept = 0.0;
  int epochs_run = 0;
  bool converged = false;
};

inline void check_binary_labels(std::span<const int> labels) {
  std::size_t pos = 0;
  for (int y : labels) {
    if (y != 0 && y != 1) throw DataError("labels must be 0 or 1");
    pos += static_cast<std::size_t>(y);
  }
  if (pos == 0 || pos == labels.size()) {
    throw DataError("training requires at least one positive and one negative label (got " +
                    std::to_string(pos) + " positive of " + std::to_string(labels.size()) + ")");
  }
}

// Plain per-sample SGD on regularized_loss with step
//   eta_t = 1 / (l2 * (t0 + t - 1)),  t0 = 1 / (l2 * sqrt(1 / sqrt(l2))),
// stopping when the mean epoch loss fails to improve by `tolerance` for
// n_iter_no_change consecutive epochs.
template <Design D>
SgdResult train_sgd(const D& x, std::span<const int> labels, const TrainConfig& cfg) {
  cfg.validate();
  if (labels.size() != x.rows()) throw DataError("train: label count does not match feature rows");
  if (x.rows() == 0) throw DataError("train: no rows");
  check_binary_labels(labels);

  const std::size_t n = x.rows();
  const double sched_l2 = cfg.l2_strength > 0.0 ? cfg.l2_strength : 1e-4;
  const double typical_w = std::sqrt(1.0 / std::sqrt(sched_l2));
  const double t0 = 1.0 / (typical_w * sched_l2);

  SgdResult res;
  res.weights.assign(x.cols(), 0.0);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(mix_seed(cfg.seed));
  double best_loss = std::numeric_limits<double>::infinity();
  int no_improvement = 0;
  double t = 1.0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (cfg.shuffle_each_epoch) rng.shuffle(std::span<std::size_t>(order));
    double sum_loss = 0.0;
    for (std::size_t i : order) {
      const double eta = 1.0 / (sched_l2 * (t0 + t - 1.0));
      const double s = labels[i] ? 1.0 : -1.0;
      const double z = x.dot(i, res.weights) + res.intercept;
      sum_loss += softplus(-s * z);
      const double dloss = sigmoid(z) - static_cast<double>(labels[i]);
      if (cfg.l2_strength > 0.0) {
        const double shrink = std::max(0.0, 1.0 - 2.0 * eta * cfg.l2_strength);
        for (double& w : res.weights) w *= shrink;
      }
      x.add_scaled(i, -eta * dloss, res.weights);
      if (cfg.fit_intercept) res.intercept -= eta * dloss;
      t += 1.0;
    }
    res.epochs_run = epoch + 1;
    const double epoch_loss = sum_loss / static_cast<double>(n);
    if (epoch_loss > best_loss - cfg.tolerance) {
      ++no_improvement;
    } else {
      no_improvement = 0;
    }
    best_loss = std::min(best_loss, epoch_loss);
    if (no_improvement >= cfg.n_iter_no_change) {
      res.converged = true;
      break;
    }
  }
  for (double w : res.weights) {
    if (!std::isfinite(w)) throw DataError("train: weights diverged");
  }
  return res;
}

struct LinearModel {
  std::string task;
  std::vector<std::string> query_ids;
  std::vector<double> weights;
  double intercept = 0.0;
  std::string train_fingerprint;
  json config = json::object();

  std::optional<std::size_t> index_of(const std::string& id) const {
    for (std::size_t i = 0; i < query_ids.size(); ++i) {
      if (query_ids[i] == id) return i;
    }
    return std::nullopt;
  }

  bool operator==(const LinearModel&) const = default;
};

inline json model_to_json(const LinearModel& m) {
  return {{"task", m.task},
          {"query_ids", m.query_ids},
          {"weights", m.weights},
          {"intercept", m.intercept},
          {"train_fingerprint", m.train_fingerprint},
          {"config", m.config}};
}

inline LinearModel model_from_json(const json& j) {
  LinearModel m;
  try {
    m.task = j.at("task").get<std::string>();
    m.query_ids = j.at("query_ids").get<std::vector<std::string>>();
    m.weights = j.at("weights").get<std::vector<double>>();
    m.intercept = j.at("intercept").get<double>();
    m.train_fingerprint = j.value("train_fingerprint", std::string());
    m.config = j.value("config", json::object());
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed model: ") + e.what());
  }
  if (m.weights.size() != m.query_ids.size()) throw DataError("malformed model: weights/query_ids size mismatch");
  for (double w : m.weights) {
    if (!std::isfinite(w)) throw DataError("malformed model: non-finite weight");
  }
  return m;
}

inline void save_model(const LinearModel& m, const std::filesystem::path& path) {
  detail::write_atomically(path, model_to_json(m).dump(2) + "\n");
}

inline LinearModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  try {
    return model_from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

inline std::string train_fingerprint(const TrainConfig& cfg, const FeatureMatrix& features,
                                     const std::vector<std::string>& ids, const std::string& task) {
  ContentHasher h;
  h.add(cfg.to_json().dump()).add(task);
  if (features.provenance.contains("content_hash")) {
    h.add(features.provenance["content_hash"].dump());
    h.add(features.provenance.value("binarized", false) ? "binary" : "continuous");
  } else {
    h.add(features.provenance.dump());
  }
  for (const auto& id : ids) h.add(id);
  return h.hex();
}

// Trains on every row of `features` (callers restrict to the train split).
// Columns are processed in sorted-id order, so permuting the input columns
// permutes the weights and changes nothing else.
inline LinearModel train(const FeatureMatrix& features, std::span<const int> labels, const TrainConfig& cfg,
                         const std::string& task = {}) {
  for (double v : features.values) {
    if (!std::isfinite(v)) throw DataError("train: non-finite feature value");
  }
  std::vector<std::string> sorted_ids = features.query_ids;
  std::sort(sorted_ids.begin(), sorted_ids.end());
  if (std::adjacent_find(sorted_ids.begin(), sorted_ids.end()) != sorted_ids.end()) {
    throw DataError("train: duplicate feature column id");
  }
  const FeatureMatrix canonical = features.select_columns(sorted_ids);
  const DenseDesign design(canonical.values, canonical.rows(), canonical.cols());
  const SgdResult fit = train_sgd(design, labels, cfg);

  LinearModel m;
  m.task = task;
  m.query_ids = features.query_ids;
  m.weights.resize(m.query_ids.size());
  for (std::size_t j = 0; j < m.query_ids.size(); ++j) {
    const auto pos = std::lower_bound(sorted_ids.begin(), sorted_ids.end(), m.query_ids[j]) - sorted_ids.begin();
    m.weights[j] = fit.weights[static_cast<std::size_t>(pos)];
  }
  m.intercept = fit.intercept;
  m.config = cfg.to_json();
  m.train_fingerprint = train_fingerprint(cfg, features, features.query_ids, task);
  return m;
}

namespace detail {

// model column j -> matrix column.
inline std::vector<std::size_t> align_columns(const LinearModel& m, const FeatureMatrix& f) {
  std::vector<std::size_t> map(m.query_ids.size());
  for (std::size_t j = 0; j < m.query_ids.size(); ++j) {
    auto c = f.col_of(m.query_ids[j]);
    if (!c) throw DataError("features lack column '" + m.query_ids[j] + "' required by the model");
    map[j] = *c;
  }
  return map;
}

}  // namespace detail

inline std::vector<double> predict_logit(const LinearModel& m, const FeatureMatrix& f) {
  const auto map = detail::align_columns(m, f);
  std::vector<double> out(f.rows());
  for (std::size_t r = 0; r < f.rows(); ++r) {
    double z = m.intercept;
    for (std::size_t j = 0; j < map.size(); ++j) z += m.weights[j] * f.at(r, map[j]);
    out[r] = z;
  }
  return out;
}

inline std::vector<double> predict_proba(const LinearModel& m, const FeatureMatrix& f) {
  auto out = predict_logit(m, f);
  for (double& v : out) v = sigmoid(v);
  return out;
}

using FeatureRow = std::map<std::string, double>;

inline double predict_proba(const LinearModel& m, const FeatureRow& row) {
  double z = m.intercept;
  for (std::size_t j = 0; j < m.query_ids.size(); ++j) {
    auto it = row.find(m.query_ids[j]);
    if (it == row.end()) throw DataError("features lack column '" + m.query_ids[j] + "' required by the model");
    z += m.weights[j] * it->second;
  }
  return sigmoid(z);
}

struct Contribution {
  std::string query_id;
  double feature_value = 0.0;
  double score = 0.0;  // weight * feature_value

  bool operator==(const Contribution&) const = default;
};

// Per-feature contributions to one prediction, largest score first.
struct Explanation {
  std::vector<Contribution> contributions;
  double intercept = 0.0;
  double logit = 0.0;
  double predicted_probability = 0.5;
};

inline Explanation explain(const LinearModel& m, const FeatureRow& row) {
  Explanation e;
  e.intercept = m.intercept;
  double z = m.intercept;
  for (std::size_t j = 0; j < m.query_ids.size(); ++j) {
    auto it = row.find(m.query_ids[j]);
    if (it == row.end()) throw DataError("features lack column '" + m.query_ids[j] + "' required by the model");
    const double score = m.weights[j] * it->second;
    e.contributions.push_back({m.query_ids[j], it->second, score});
    z += score;
  }
  e.logit = z;
  e.predicted_probability = sigmoid(z);
  std::stable_sort(e.contributions.begin(), e.contributions.end(),
                   [](const Contribution& a, const Contribution& b) { return a.score > b.score; });
  return e;
}

inline FeatureRow feature_row(const FeatureMatrix& f, std::size_t r) {
  FeatureRow row;
  for (std::size_t c = 0; c < f.cols(); ++c) row.emplace(f.query_ids[c], f.at(r, c));
  return row;
}

inline json explanation_to_json(const Explanation& e) {
  json scores = json::array();
  for (const auto& c : e.contributions) {
    scores.push_back({{"query_id", c.query_id}, {"feature_value", c.feature_value}, {"score", c.score}});
  }
  return {{"scores", scores},
          {"intercept", e.intercept},
          {"logit", e.logit},
          {"predicted_probability", e.predicted_probability}};
}

struct RetrainInputs {
  const FeatureMatrix& features;
  std::span<const int> labels;
  TrainConfig config;
};

// Removes `drop` from the model. Without retraining the dropped weights are
// zeroed and everything else is left bit-identical; with retraining a fresh
// model is fit on the remaining columns only.
inline LinearModel prune(const LinearModel& m, const std::set<std::string>& drop, bool retrain,
                         const std::optional<RetrainInputs>& inputs = std::nullopt) {
  for (const auto& id : drop) {
    if (!m.index_of(id)) throw DataError("prune: unknown query_id '" + id + "'");
  }
  if (drop.empty() && !retrain) return m;
  ContentHasher h;
  h.add(m.train_fingerprint).add(retrain ? "retrain" : "zero");
  for (const auto& id : drop) h.add(id);
  if (!retrain) {
    LinearModel out = m;
    for (std::size_t j = 0; j < out.query_ids.size(); ++j) {
      if (drop.count(out.query_ids[j])) out.weights[j] = 0.0;
    }
    out.train_fingerprint = h.hex();
    return out;
  }
  if (!inputs) throw DataError("prune: retraining requires features, labels and a config");
  std::vector<std::string> keep;
  for (const auto& id : m.query_ids) {
    if (!drop.count(id)) keep.push_back(id);
  }
  if (keep.empty()) throw DataError("prune: cannot retrain with every feature dropped");
  LinearModel out = train(inputs->features.select_columns(keep), inputs->labels, inputs->config, m.task);
  out.train_fingerprint = h.add(out.train_fingerprint).hex();
  return out;
}

}  // namespace nlfeat

#endif  // NLFEAT_LINEAR_HPP_
