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

#ifndef NLFEAT_SCORER_HPP_
#define NLFEAT_SCORER_HPP_

#include <array>
#include <cctype>
#include <cstdio>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "nlfeat/core.hpp"
#include "nlfeat/error.hpp"
#include "nlfeat/hash.hpp"
#include "nlfeat/rng.hpp"

namespace nlfeat {

inline constexpr std::string_view kYes = "yes";
inline constexpr std::string_view kNo = "no";

struct ScoreRequest {
  std::string prompt;
  std::array<std::string, 2> candidates{std::string(kYes), std::string(kNo)};
  // Routing key naming the query (or downstream task) the prompt was rendered
  // for. Only in-process backends read it; it never goes on the wire.
  std::string query_id;

  void validate() const {
    if (prompt.empty()) throw ScorerError(ScorerError::Reason::kContract, "score request: prompt is empty");
    if (candidates[0] != kYes || candidates[1] != kNo) {
      throw ScorerError(ScorerError::Reason::kContract,
                        "score request: candidates must be (\"yes\",\"no\"), got (\"" + candidates[0] +
                            "\",\"" + candidates[1] + "\")");
    }
  }
};

// Natural-log masses of the two continuations.
struct ScoreResponse {
  double logprob_yes = 0.0;
  double logprob_no = 0.0;
  std::optional<std::int64_t> prompt_token_count;

  bool operator==(const ScoreResponse&) const = default;
};

// Every backend implements this. Implementations must tolerate concurrent
// calls and return the same response for the same request.
class Scorer {
 public:
  virtual ~Scorer() = default;
  virtual ScoreResponse score(const ScoreRequest& request) const = 0;
  // Stable description of the backend and its settings; part of every
  // feature provenance record.
  virtual std::string identity() const = 0;
  // Upper bound on concurrent score() calls worth issuing.
  virtual std::size_t max_inflight() const { return 1; }
};

struct LexiconEntry {
  std::vector<std::string> keywords;  // lowercase
  double alpha = 1.0;
  double beta = 0.0;
};

struct MockLexicon {
  std::map<std::string, LexiconEntry> entries;

  const LexiconEntry& at(const std::string& query_id) const {
    auto it = entries.find(query_id);
    if (it == entries.end()) {
      throw ScorerError(ScorerError::Reason::kContract, "mock scorer: unknown query_id '" + query_id + "'");
    }
    return it->second;
  }
};

inline MockLexicon lexicon_from_json(const json& doc) {
  const json& entries = doc.contains("entries") ? doc["entries"] : doc;
  if (!entries.is_object()) throw DataError("lexicon must be a JSON object keyed by query_id");
  MockLexicon lex;
  for (const auto& [qid, e] : entries.items()) {
    LexiconEntry entry;
    if (!e.is_object() || !e.contains("keywords") || !e["keywords"].is_array()) {
      throw DataError("lexicon entry '" + qid + "': missing array \"keywords\"");
    }
    for (const auto& k : e["keywords"]) {
      std::string kw = k.get<std::string>();
      for (auto& c : kw) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
      if (kw.empty()) throw DataError("lexicon entry '" + qid + "': empty keyword");
      entry.keywords.push_back(std::move(kw));
    }
    if (entry.keywords.empty()) throw DataError("lexicon entry '" + qid + "': keywords must be non-empty");
    entry.alpha = e.value("alpha", 1.0);
    entry.beta = e.value("beta", 0.0);
    if (!std::isfinite(entry.alpha) || !std::isfinite(entry.beta)) {
      throw DataError("lexicon entry '" + qid + "': alpha and beta must be finite");
    }
    lex.entries.emplace(qid, std::move(entry));
  }
  return lex;
}

inline json lexicon_to_json(const MockLexicon& lex) {
  json out = json::object();
  for (const auto& [qid, e] : lex.entries) {
    out[qid] = {{"keywords", e.keywords}, {"alpha", e.alpha}, {"beta", e.beta}};
  }
  return out;
}

inline MockLexicon load_lexicon(const std::string& path) {
  auto in = detail::open_input(path);
  try {
    return lexicon_from_json(json::parse(in));
  } catch (const json::exception& e) {
    throw DataError(path + ": " + e.what());
  }
}

// The source text embedded between the first and last delimiter of a
// rendered prompt. Falls back to the whole prompt when no delimiters exist.
inline std::string_view embedded_source_text(std::string_view prompt,
                                             std::string_view delimiter = kDashDelimiter) {
  const auto open = prompt.find(delimiter);
  const auto close = prompt.rfind(delimiter);
  if (open == std::string_view::npos || close == open) return prompt;
  const auto start = open + delimiter.size();
  return prompt.substr(start, close - start);
}

// Non-overlapping, case-insensitive occurrences of each keyword, summed.
inline std::size_t count_keyword_occurrences(std::string_view text,
                                             const std::vector<std::string>& keywords) {
  std::string lower(text);
  for (auto& c : lower) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  std::size_t total = 0;
  for (const auto& kw : keywords) {
    for (auto pos = lower.find(kw); pos != std::string::npos; pos = lower.find(kw, pos + kw.size())) {
      ++total;
    }
  }
  return total;
}

// Optional Gaussian perturbation of logprob_yes. The draw is a pure function
// of (seed, query_id, prompt), so results do not depend on call order.
struct MockNoise {
  double sigma = 0.0;
  std::uint64_t seed = 0;
};

inline ScoreResponse mock_score(const ScoreRequest& request, const MockLexicon& lexicon,
                                const std::string& query_id, const MockNoise& noise = {}) {
  request.validate();
  const auto& entry = lexicon.at(query_id);
  const auto k = count_keyword_occurrences(embedded_source_text(request.prompt), entry.keywords);
  ScoreResponse r;
  r.logprob_yes = entry.alpha * static_cast<double>(k) + entry.beta;
  r.logprob_no = 0.0;
  if (noise.sigma > 0.0) {
    const auto stream = ContentHasher().add(noise.seed).add(query_id).add(request.prompt).digest();
    Rng rng(mix_seed(stream));
    r.logprob_yes += noise.sigma * rng.normal();
  }
  return r;
}

class MockScorer final : public Scorer {
 public:
  explicit MockScorer(MockLexicon lexicon, MockNoise noise = {}, std::size_t inflight = 4)
      : lexicon_(std::move(lexicon)), noise_(noise), inflight_(inflight) {}

  ScoreResponse score(const ScoreRequest& request) const override {
    return mock_score(request, lexicon_, request.query_id, noise_);
  }

  std::string identity() const override {
    ContentHasher h;
    h.add(lexicon_to_json(lexicon_).dump());
    std::string id = "mock:" + h.hex();
    if (noise_.sigma > 0.0) {
      char buf[64];
      std::snprintf(buf, sizeof(buf), ":noise=%.17g:seed=%llu", noise_.sigma,
                    static_cast<unsigned long long>(noise_.seed));
      id += buf;
    }
    return id;
  }

  std::size_t max_inflight() const override { return inflight_; }

  const MockLexicon& lexicon() const { return lexicon_; }
  const MockNoise& noise() const { return noise_; }

 private:
  MockLexicon lexicon_;
  MockNoise noise_;
  std::size_t inflight_;
};

}  // namespace nlfeat

#endif  // NLFEAT_SCORER_HPP_
