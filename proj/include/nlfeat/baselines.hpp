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

#ifndef NLFEAT_BASELINES_HPP_
#define NLFEAT_BASELINES_HPP_

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "json.hpp"
#include "nlfeat/core.hpp"
#include "nlfeat/extract.hpp"
#include "nlfeat/linear.hpp"
#include "nlfeat/scorer.hpp"

namespace nlfeat {

// Lowercased maximal runs of ASCII letters and digits. Any other byte
// (including UTF-8 continuation bytes) separates tokens.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (c < 0x80 && std::isalnum(c)) {
      cur += static_cast<char>(std::tolower(c));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

class TfidfVocabulary {
 public:
  TfidfVocabulary() = default;
  TfidfVocabulary(std::vector<std::string> terms, std::vector<std::size_t> df, std::size_t n)
      : terms_(std::move(terms)), df_(std::move(df)), n_(n) {
    if (terms_.size() != df_.size()) throw DataError("vocabulary: terms/df size mismatch");
    for (std::size_t i = 0; i < terms_.size(); ++i) {
      if (df_[i] == 0 || df_[i] > n_) throw DataError("vocabulary: df out of range for '" + terms_[i] + "'");
      if (!index_.emplace(terms_[i], i).second) throw DataError("vocabulary: duplicate term '" + terms_[i] + "'");
    }
  }

  const std::vector<std::string>& terms() const { return terms_; }
  const std::vector<std::size_t>& df() const { return df_; }
  std::size_t corpus_size() const { return n_; }
  std::size_t size() const { return terms_.size(); }

  // Smoothed idf: ln((1 + n) / (1 + df)) + 1.
  double idf(std::size_t i) const {
    return std::log((1.0 + static_cast<double>(n_)) / (1.0 + static_cast<double>(df_[i]))) + 1.0;
  }

  std::optional<std::size_t> index_of(const std::string& term) const {
    auto it = index_.find(term);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

 private:
  std::vector<std::string> terms_;
  std::vector<std::size_t> df_;
  std::size_t n_ = 0;
  std::unordered_map<std::string, std::size_t> index_;
};

// Top `vocab_size` terms by document frequency, ties broken lexicographically.
inline TfidfVocabulary fit_tfidf(std::span<const Document* const> docs, std::size_t vocab_size) {
  if (docs.empty()) throw DataError("fit_tfidf: empty corpus");
  if (vocab_size == 0) throw DataError("fit_tfidf: vocab_size must be positive");
  std::unordered_map<std::string, std::size_t> df;
  for (const Document* d : docs) {
    auto toks = tokenize(d->text);
    std::sort(toks.begin(), toks.end());
    toks.erase(std::unique(toks.begin(), toks.end()), toks.end());
    for (auto& t : toks) ++df[t];
  }
  std::vector<std::pair<std::string, std::size_t>> ranked(df.begin(), df.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  if (ranked.size() > vocab_size) ranked.resize(vocab_size);
  std::vector<std::string> terms;
  std::vector<std::size_t> counts;
  for (auto& [t, c] : ranked) {
    terms.push_back(t);
    counts.push_back(c);
  }
  return TfidfVocabulary(std::move(terms), std::move(counts), docs.size());
}

inline TfidfVocabulary fit_tfidf(const std::vector<Document>& docs, std::size_t vocab_size) {
  std::vector<const Document*> ptrs;
  for (const auto& d : docs) ptrs.push_back(&d);
  return fit_tfidf(std::span<const Document* const>(ptrs), vocab_size);
}

// Raw term counts times idf, then L2-normalized; a zero vector stays zero.
// Entries are sorted by term index.
inline SparseRow tfidf_features(std::string_view text, const TfidfVocabulary& vocab) {
  std::map<std::uint32_t, double> counts;
  for (const auto& t : tokenize(text)) {
    if (auto i = vocab.index_of(t)) counts[static_cast<std::uint32_t>(*i)] += 1.0;
  }
  SparseRow row;
  double sq = 0.0;
  for (const auto& [i, c] : counts) {
    const double v = c * vocab.idf(i);
    row.emplace_back(i, v);
    sq += v * v;
  }
  if (sq > 0.0) {
    const double norm = std::sqrt(sq);
    for (auto& [_, v] : row) v /= norm;
  }
  return row;
}

inline SparseRow tfidf_features(const Document& doc, const TfidfVocabulary& vocab) {
  return tfidf_features(doc.text, vocab);
}

inline json vocabulary_to_json(const TfidfVocabulary& v) {
  return {{"terms", v.terms()}, {"df", v.df()}, {"n", v.corpus_size()}};
}

inline TfidfVocabulary vocabulary_from_json(const json& j) {
  try {
    return TfidfVocabulary(j.at("terms").get<std::vector<std::string>>(),
                           j.at("df").get<std::vector<std::size_t>>(), j.at("n").get<std::size_t>());
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed vocabulary: ") + e.what());
  }
}

// Logistic regression over TF-IDF rows; the model's ids are the terms.
inline LinearModel train_tfidf_model(const std::vector<SparseRow>& rows, std::span<const int> labels,
                                     const TfidfVocabulary& vocab, const TrainConfig& cfg,
                                     const std::string& task) {
  const SparseDesign design(rows, vocab.size());
  const auto fit = train_sgd(design, labels, cfg);
  LinearModel m;
  m.task = task;
  m.query_ids = vocab.terms();
  m.weights = fit.weights;
  m.intercept = fit.intercept;
  m.config = cfg.to_json();
  m.config["features"] = "tfidf";
  m.config["vocab_size"] = vocab.size();
  ContentHasher h;
  h.add(cfg.to_json().dump()).add(task).add(vocabulary_to_json(vocab).dump());
  m.train_fingerprint = h.hex();
  return m;
}

inline double sparse_logit(const LinearModel& m, const SparseRow& row) {
  double z = m.intercept;
  for (const auto& [j, v] : row) z += m.weights[j] * v;
  return z;
}

struct DownstreamQuery {
  std::string task;
  std::string question;
  std::string template_id = "mimic";
};

inline std::vector<DownstreamQuery> downstream_queries(const QuerySet& qs) {
  std::vector<DownstreamQuery> out;
  for (const auto& q : qs.queries()) {
    out.push_back({q.task.empty() ? q.query_id : q.task, q.question, q.template_id});
  }
  return out;
}

// Asks the downstream question itself and returns the calibrated, chunk-
// pooled "yes" probability. Shares score_text with feature extraction; the
// routing key for in-process scorers is the task name.
inline double zero_shot_downstream(const Document& doc, const DownstreamQuery& dq, const Scorer& scorer,
                                   const ChunkingConfig& cfg) {
  if (dq.question.empty()) throw DataError("downstream query for '" + dq.task + "': question is empty");
  FeatureQuery q;
  q.query_id = dq.task;
  q.question = dq.question;
  q.template_id = dq.template_id;
  return score_text(doc.text, q, scorer, cfg);
}

}  // namespace nlfeat

#endif  // NLFEAT_BASELINES_HPP_
