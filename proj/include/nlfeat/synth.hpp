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

#ifndef NLFEAT_SYNTH_HPP_
#define NLFEAT_SYNTH_HPP_

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "nlfeat/core.hpp"
#include "nlfeat/feature_matrix.hpp"
#include "nlfeat/linear.hpp"
#include "nlfeat/rng.hpp"
#include "nlfeat/scorer.hpp"

namespace nlfeat {

// Synthetic corpus: each document carries latent binary findings, each
// finding present is written into the text as its keyword 1-3 times, and the
// label is drawn from a fixed logistic model over the findings.
struct SynthConfig {
  std::uint64_t seed = 42;
  std::size_t n_train = 2000;
  std::size_t n_test = 500;
  std::size_t min_words = 60;
  std::size_t max_words = 700;
  double alpha = 3.0;  // mock lexicon slope per keyword occurrence
  double beta = -1.5;  // mock lexicon offset
  std::string task = "outcome";
};

struct SynthFeature {
  const char* query_id;
  const char* keyword;
  const char* question;
  double prevalence;
  double weight;  // before scaling
  bool custom;
};

inline constexpr double kSynthWeightScale = 2.2;
inline constexpr std::size_t kSynthVocabulary = 40000;

inline const std::array<SynthFeature, 12>& synth_features() {
  static const std::array<SynthFeature, 12> kFeatures = {{
      {"sepsis", "sepsis", "Does this mean the patient has sepsis?", 0.35, 3.0, false},
      {"hypertension", "hypertension", "Does this mean the patient has hypertension?", 0.30, -2.5, false},
      {"heart_failure", "chf", "Does this mean the patient has congestive heart failure?", 0.40, 2.5, false},
      {"diabetes", "diabetes", "Does this mean the patient has diabetes mellitus?", 0.25, -2.0, false},
      {"kidney_disease", "nephropathy", "Does this mean the patient has chronic kidney disease?", 0.30, 2.0, false},
      {"pneumonia", "pneumonia", "Does this mean the patient has pneumonia?", 0.45, 1.5, false},
      {"atrial_fibrillation", "fibrillation", "Does this mean the patient has atrial fibrillation?", 0.35, -1.5, false},
      {"copd", "copd", "Does this mean the patient has chronic obstructive pulmonary disease?", 0.20, 1.5, false},
      {"anemia", "anemia", "Does this mean the patient has anemia?", 0.30, -1.0, false},
      {"hyperlipidemia", "hyperlipidemia", "Does this mean the patient has hyperlipidemia?", 0.40, 1.0, false},
      {"has_chronic", "chronic", "Does the patient have a chronic illness?", 0.25, 2.0, true},
      {"life_threatening", "critical", "Is the condition life-threatening?", 0.35, -2.0, true},
  }};
  return kFeatures;
}

inline const std::vector<std::string>& synth_common_words() {
  static const std::vector<std::string> kWords = {
      "patient", "admitted", "with", "history", "of", "presented", "to", "the", "emergency", "department",
      "was", "noted", "on", "exam", "vital", "signs", "stable", "pain", "denies", "reports",
      "medications", "continued", "plan", "follow", "up", "discharge", "home", "labs", "within", "normal",
      "limits", "imaging", "reviewed", "no", "acute", "distress", "alert", "oriented", "family", "at",
      "bedside", "nursing", "overnight", "events", "tolerated", "diet", "ambulating", "hallway", "afebrile", "blood",
      "pressure", "heart", "rate", "regular", "rhythm", "lungs", "clear", "bilaterally", "abdomen", "soft",
      "nontender", "extremities", "warm", "pulses", "intact", "neuro", "grossly", "nonfocal", "skin", "dry",
      "wound", "dressing", "changed", "physical", "therapy", "consulted", "social", "work", "case", "manager",
      "insurance", "pharmacy", "dose", "adjusted", "morning", "evening", "afternoon", "team", "discussed", "daughter",
      "son", "wife", "husband", "lives", "alone", "independent", "baseline", "mobility", "walker", "cane",
      "fall", "risk", "precautions", "ordered", "repeat", "tomorrow", "today", "yesterday", "weight", "stable",
      "urine", "output", "adequate", "fluids", "encouraged", "oral", "intake", "improving", "slowly", "cough",
      "mild", "moderate", "sleep", "poor", "appetite", "fair", "mood", "good", "education", "provided",
      "questions", "answered", "understanding", "verbalized", "appointment", "scheduled", "clinic", "primary", "care", "provider",
      "x", "ray", "ordered", "reviewed", "echo", "pending", "result", "called", "left", "right",
      "upper", "lower", "side", "back", "chest", "shoulder", "knee", "hip", "ankle", "wrist",
  };
  return kWords;
}

// Filler vocabulary: the common words above followed by consonant-vowel
// pseudo-words, so TF-IDF sees a realistically long tail. Pseudo-words never
// contain a keyword (CV syllables cannot form the keywords' clusters, and
// generate_synthetic checks anyway).
inline const std::vector<std::string>& synth_filler_words() {
  static const std::vector<std::string> kWords = [] {
    std::vector<std::string> words;
    std::set<std::string> seen;
    for (const auto& w : synth_common_words()) {
      if (seen.insert(w).second) words.push_back(w);
    }
    static constexpr std::string_view kConsonants = "bdfgklmnprstvz";
    static constexpr std::string_view kVowels = "aeiou";
    Rng rng(0xf111e7);
    while (words.size() < kSynthVocabulary) {
      std::string w;
      const auto syllables = 2 + rng.below(2);
      for (std::uint64_t i = 0; i < syllables; ++i) {
        w += kConsonants[rng.below(kConsonants.size())];
        w += kVowels[rng.below(kVowels.size())];
      }
      if (seen.insert(w).second) words.push_back(w);
    }
    return words;
  }();
  return kWords;
}

// Zipf(1) sampler over the filler vocabulary.
class ZipfSampler {
 public:
  explicit ZipfSampler(std::size_t n) : cdf_(n) {
    double total = 0.0;
    for (std::size_t r = 0; r < n; ++r) cdf_[r] = (total += 1.0 / static_cast<double>(r + 1));
    for (auto& c : cdf_) c /= total;
  }
  std::size_t operator()(Rng& rng) const {
    const auto it = std::upper_bound(cdf_.begin(), cdf_.end(), rng.uniform());
    return std::min<std::size_t>(static_cast<std::size_t>(it - cdf_.begin()), cdf_.size() - 1);
  }

 private:
  std::vector<double> cdf_;
};

struct SynthCorpus {
  Dataset dataset;
  QuerySet queries;
  QuerySet downstream;
  MockLexicon lexicon;
  json truth;
};

inline SynthCorpus generate_synthetic(const SynthConfig& cfg) {
  if (cfg.min_words == 0 || cfg.max_words < cfg.min_words) throw UsageError("synth: invalid word range");
  const auto& features = synth_features();
  const auto& filler = synth_filler_words();
  for (const auto& w : filler) {
    for (const auto& f : features) {
      if (w.find(f.keyword) != std::string::npos) {
        throw std::logic_error(std::string("synth filler '") + w + "' contains keyword " + f.keyword);
      }
    }
  }
  std::vector<double> weights;
  double intercept = 0.0;
  for (const auto& f : features) {
    weights.push_back(kSynthWeightScale * f.weight);
    intercept -= weights.back() * f.prevalence;
  }

  const ZipfSampler zipf(filler.size());
  Rng rng(mix_seed(cfg.seed, 0x5e7));
  std::vector<Document> docs;
  const std::size_t total = cfg.n_train + cfg.n_test;
  for (std::size_t i = 0; i < total; ++i) {
    Document d;
    char id[32];
    std::snprintf(id, sizeof(id), "syn-%05zu", i);
    d.doc_id = id;
    d.split = i < cfg.n_train ? Split::kTrain : Split::kTest;
    const std::size_t length = cfg.min_words + static_cast<std::size_t>(rng.below(cfg.max_words - cfg.min_words + 1));
    std::vector<std::string> words;
    words.reserve(length + 3 * features.size());
    for (std::size_t w = 0; w < length; ++w) words.push_back(filler[zipf(rng)]);
    double logit = intercept;
    for (std::size_t j = 0; j < features.size(); ++j) {
      const bool present = rng.bernoulli(features[j].prevalence);
      d.reference_features[features[j].query_id] = present ? 1 : 0;
      if (!present) continue;
      logit += weights[j];
      const auto copies = 1 + rng.below(3);
      for (std::uint64_t c = 0; c < copies; ++c) {
        const auto pos = rng.below(words.size() + 1);
        words.insert(words.begin() + static_cast<std::ptrdiff_t>(pos), features[j].keyword);
      }
    }
    d.labels[cfg.task] = rng.bernoulli(sigmoid(logit)) ? 1 : 0;
    std::string text;
    for (std::size_t w = 0; w < words.size(); ++w) {
      if (w) text += (w % 13 == 0) ? ". " : " ";
      text += words[w];
    }
    text += ".";
    text[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(text[0])));
    d.text = std::move(text);
    docs.push_back(std::move(d));
  }

  std::vector<FeatureQuery> queries;
  MockLexicon lex;
  std::vector<std::string> positive_keywords;
  for (std::size_t j = 0; j < features.size(); ++j) {
    FeatureQuery q;
    q.query_id = features[j].query_id;
    q.question = features[j].question;
    q.template_id = "mimic";
    q.custom = features[j].custom;
    q.expected_support[cfg.task] = weights[j] > 0 ? Support::kSupports : Support::kNotRelevant;
    queries.push_back(q);
    lex.entries[q.query_id] = {{features[j].keyword}, cfg.alpha, cfg.beta};
    if (weights[j] > 0) positive_keywords.push_back(features[j].keyword);
  }
  // Downstream routing key is the task name.
  lex.entries[cfg.task] = {positive_keywords, cfg.alpha, cfg.beta};
  FeatureQuery dq;
  dq.query_id = cfg.task;
  dq.task = cfg.task;
  dq.question = "Will the patient have a poor outcome?";
  dq.template_id = "mimic";

  json truth = {{"seed", cfg.seed},
                {"task", cfg.task},
                {"intercept", intercept},
                {"features", json::array()}};
  for (std::size_t j = 0; j < features.size(); ++j) {
    truth["features"].push_back({{"query_id", features[j].query_id},
                                 {"keyword", features[j].keyword},
                                 {"prevalence", features[j].prevalence},
                                 {"weight", weights[j]},
                                 {"custom", features[j].custom}});
  }
  return {Dataset(std::move(docs)), QuerySet("synthetic", std::move(queries)),
          QuerySet("synthetic-downstream", {dq}, true), std::move(lex), std::move(truth)};
}

struct SynthPaths {
  std::filesystem::path dataset, queries, downstream, lexicon, truth;
};

inline SynthPaths synth_paths(const std::filesystem::path& dir) {
  return {dir / "dataset.jsonl", dir / "queries.json", dir / "downstream.json", dir / "lexicon.json",
          dir / "truth.json"};
}

inline SynthPaths write_synthetic(const SynthCorpus& c, const std::filesystem::path& dir) {
  const auto p = synth_paths(dir);
  detail::write_atomically(p.dataset, serialize_dataset(c.dataset));
  detail::write_atomically(p.queries, queries_to_json(c.queries).dump(2) + "\n");
  detail::write_atomically(p.downstream, queries_to_json(c.downstream).dump(2) + "\n");
  detail::write_atomically(p.lexicon, lexicon_to_json(c.lexicon).dump(2) + "\n");
  detail::write_atomically(p.truth, c.truth.dump(2) + "\n");
  return p;
}

}  // namespace nlfeat

#endif  // NLFEAT_SYNTH_HPP_
