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

#ifndef NLFEAT_EXTRACT_HPP_
#define NLFEAT_EXTRACT_HPP_

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <exception>
#include <filesystem>
#include <functional>
#include <limits>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "json.hpp"
#include "nlfeat/core.hpp"
#include "nlfeat/error.hpp"
#include "nlfeat/feature_matrix.hpp"
#include "nlfeat/hash.hpp"
#include "nlfeat/prompt_template.hpp"
#include "nlfeat/scorer.hpp"

namespace nlfeat {

enum class TokenUnit { kBackendTokens, kWhitespaceWords };

struct ChunkingConfig {
  std::size_t max_tokens_per_chunk = 512;
  std::size_t max_chunks = 4;
  // kBackendTokens falls back to whitespace words when the backend does not
  // report prompt_token_count.
  TokenUnit token_unit = TokenUnit::kBackendTokens;

  json to_json() const {
    return {{"max_tokens_per_chunk", max_tokens_per_chunk},
            {"max_chunks", max_chunks},
            {"token_unit", token_unit == TokenUnit::kBackendTokens ? "backend-tokens" : "whitespace-words"}};
  }

  static ChunkingConfig from_json(const json& j) {
    ChunkingConfig c;
    c.max_tokens_per_chunk = j.value("max_tokens_per_chunk", c.max_tokens_per_chunk);
    c.max_chunks = j.value("max_chunks", c.max_chunks);
    const std::string unit = j.value("token_unit", std::string("backend-tokens"));
    if (unit == "backend-tokens") {
      c.token_unit = TokenUnit::kBackendTokens;
    } else if (unit == "whitespace-words") {
      c.token_unit = TokenUnit::kWhitespaceWords;
    } else {
      throw DataError("unknown token_unit '" + unit + "'");
    }
    c.validate();
    return c;
  }

  void validate() const {
    if (max_tokens_per_chunk == 0) throw DataError("max_tokens_per_chunk must be positive");
    if (max_chunks == 0) throw DataError("max_chunks must be positive");
  }
};

struct Chunk {
  std::string text;
  std::size_t first_token = 0;
  std::size_t token_count = 0;
};

namespace detail {

inline bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

// [begin, end) byte offsets of each maximal run of non-whitespace.
inline std::vector<std::pair<std::size_t, std::size_t>> word_spans(std::string_view text) {
  std::vector<std::pair<std::size_t, std::size_t>> spans;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && is_space(text[i])) ++i;
    if (i == text.size()) break;
    const std::size_t start = i;
    while (i < text.size() && !is_space(text[i])) ++i;
    spans.emplace_back(start, i);
  }
  return spans;
}

inline std::vector<Chunk> chunk_words(std::string_view text, std::size_t words_per_chunk,
                                      std::size_t max_chunks) {
  const auto spans = word_spans(text);
  std::vector<Chunk> chunks;
  for (std::size_t first = 0; first < spans.size() && chunks.size() < max_chunks;
       first += words_per_chunk) {
    const std::size_t last = std::min(first + words_per_chunk, spans.size()) - 1;
    Chunk c;
    c.first_token = first;
    c.token_count = last - first + 1;
    // Slice of the original text: inner whitespace is preserved verbatim.
    c.text = std::string(text.substr(spans[first].first, spans[last].second - spans[first].first));
    chunks.push_back(std::move(c));
  }
  return chunks;
}

inline std::size_t count_words(std::string_view text) { return word_spans(text).size(); }

}  // namespace detail

// Greedy left-to-right packing of whitespace-delimited words; only the first
// cfg.max_chunks chunks are kept.
inline std::vector<Chunk> chunk_document(std::string_view text, const ChunkingConfig& cfg) {
  cfg.validate();
  return detail::chunk_words(text, cfg.max_tokens_per_chunk, cfg.max_chunks);
}

inline std::string render_prompt(const PromptTemplate& tmpl, std::string_view chunk,
                                 const FeatureQuery& query) {
  if (query.question.empty()) throw DataError("query '" + query.query_id + "': question is empty");
  std::string out;
  out.reserve(tmpl.preamble.size() + 2 * tmpl.delimiter.size() + chunk.size() + query.question.size());
  out += tmpl.preamble;
  out += tmpl.delimiter;
  out += chunk;
  out += tmpl.delimiter;
  out += query.question;
  return out;
}

inline std::string render_prompt(std::string_view chunk, const FeatureQuery& query) {
  auto tmpl = find_template(query.template_id);
  if (!tmpl) throw DataError("unknown template_id '" + query.template_id + "'");
  return render_prompt(*tmpl, chunk, query);
}

// yes-mass normalized over {yes, no}, evaluated as 1/(1+exp(ln-ly)).
inline double calibrated_yes(const ScoreResponse& r) {
  return 1.0 / (1.0 + std::exp(r.logprob_no - r.logprob_yes));
}

// Per-chunk calibrated probability, max-pooled over chunks.
inline double continuous_feature(std::span<const ScoreResponse> responses) {
  if (responses.empty()) throw DataError("continuous_feature: no chunk responses");
  double best = 0.0;
  for (const auto& r : responses) best = std::max(best, calibrated_yes(r));
  return best;
}

// 1 iff value > 0.5; an exact tie resolves to "no".
inline int binarize(double value) {
  if (!(value >= 0.0 && value <= 1.0)) {
    throw DataError("binarize: value " + format_double(value) + " outside [0,1]");
  }
  return value > 0.5 ? 1 : 0;
}

inline FeatureMatrix binarize(const FeatureMatrix& m) {
  FeatureMatrix out = m;
  for (auto& v : out.values) v = static_cast<double>(binarize(v));
  out.provenance["binarized"] = true;
  return out;
}

// Scores one (text, query) pair: chunk, render, score every chunk, pool.
// With backend tokens, the first response's prompt_token_count calibrates a
// tokens-per-word ratio and the text is re-chunked if chunks would overflow.
inline double score_text(std::string_view text, const FeatureQuery& query, const Scorer& scorer,
                         const ChunkingConfig& cfg) {
  auto chunks = chunk_document(text, cfg);
  if (chunks.empty()) throw DataError("cannot score whitespace-only text");
  auto request_for = [&](const Chunk& c) {
    ScoreRequest req;
    req.prompt = render_prompt(c.text, query);
    req.query_id = query.query_id;
    return req;
  };
  std::vector<ScoreResponse> responses;
  responses.reserve(chunks.size());
  auto first_req = request_for(chunks.front());
  responses.push_back(scorer.score(first_req));
  if (cfg.token_unit == TokenUnit::kBackendTokens && responses.front().prompt_token_count) {
    const double prompt_words = static_cast<double>(detail::count_words(first_req.prompt));
    const double tokens = static_cast<double>(*responses.front().prompt_token_count);
    if (prompt_words > 0 && tokens > prompt_words) {
      const double ratio = tokens / prompt_words;
      const auto words_per_chunk = std::max<std::size_t>(
          1, static_cast<std::size_t>(std::floor(static_cast<double>(cfg.max_tokens_per_chunk) / ratio)));
      if (words_per_chunk < cfg.max_tokens_per_chunk) {
        chunks = detail::chunk_words(text, words_per_chunk, cfg.max_chunks);
        responses.clear();
        responses.push_back(scorer.score(request_for(chunks.front())));
      }
    }
  }
  for (std::size_t i = 1; i < chunks.size(); ++i) responses.push_back(scorer.score(request_for(chunks[i])));
  return continuous_feature(responses);
}

inline std::string query_hash(const FeatureQuery& q) {
  return ContentHasher().add(q.query_id).add(q.question).add(q.template_id).hex();
}

inline json extraction_provenance(const Dataset& ds, const QuerySet& qs, const Scorer& scorer,
                                  const ChunkingConfig& cfg) {
  json doc_hashes = json::object();
  json query_hashes = json::object();
  json templates = json::array();
  ContentHasher all;
  all.add(scorer.identity()).add(cfg.to_json().dump());
  for (const auto& d : ds.documents()) {
    const auto h = content_hash(d.text);
    doc_hashes[d.doc_id] = h;
    all.add(d.doc_id).add(h);
  }
  for (const auto& q : qs.queries()) {
    const auto h = query_hash(q);
    query_hashes[q.query_id] = h;
    all.add(h);
    if (std::find(templates.begin(), templates.end(), q.template_id) == templates.end()) {
      templates.push_back(q.template_id);
    }
  }
  return {{"scorer", scorer.identity()},
          {"chunking", cfg.to_json()},
          {"templates", templates},
          {"doc_hashes", doc_hashes},
          {"query_hashes", query_hashes},
          {"content_hash", all.hex()}};
}

struct ExtractOptions {
  std::optional<std::filesystem::path> cache;
  // Called after every completed cell with (completed, total). May be invoked
  // from worker threads, but never concurrently.
  std::function<void(std::size_t, std::size_t)> progress;
  // 0 means scorer.max_inflight().
  std::size_t workers = 0;
};

namespace detail {

// Cells of `cached` that may be reused under `prov`.
inline void reuse_cached_cells(const FeatureMatrix& cached, const json& prov, FeatureMatrix& out,
                               std::vector<char>& done) {
  const auto& cp = cached.provenance;
  if (!cp.is_object() || cp.value("scorer", json()) != prov["scorer"] ||
      cp.value("chunking", json()) != prov["chunking"] || cp.value("binarized", false)) {
    return;
  }
  const auto& cdocs = cp.value("doc_hashes", json::object());
  const auto& cqueries = cp.value("query_hashes", json::object());
  std::unordered_map<std::string, std::size_t> cached_cols;
  for (std::size_t c = 0; c < cached.cols(); ++c) cached_cols.emplace(cached.query_ids[c], c);
  std::unordered_map<std::string, std::size_t> cached_rows;
  for (std::size_t r = 0; r < cached.rows(); ++r) cached_rows.emplace(cached.doc_ids[r], r);
  for (std::size_t r = 0; r < out.rows(); ++r) {
    const auto& doc = out.doc_ids[r];
    auto cr = cached_rows.find(doc);
    if (cr == cached_rows.end() || !cdocs.contains(doc) || cdocs[doc] != prov["doc_hashes"][doc]) continue;
    for (std::size_t c = 0; c < out.cols(); ++c) {
      const auto& q = out.query_ids[c];
      auto cc = cached_cols.find(q);
      if (cc == cached_cols.end() || !cqueries.contains(q) || cqueries[q] != prov["query_hashes"][q]) continue;
      const double v = cached.at(cr->second, cc->second);
      if (std::isnan(v)) continue;
      out.at(r, c) = v;
      done[r * out.cols() + c] = 1;
    }
  }
}

}  // namespace detail

// Continuous feature for every (document, query) cell. Cells are computed
// concurrently and addressed by index, so the result does not depend on
// scheduling. With a cache path, reusable cells are loaded first and the
// cache is rewritten (including after a scorer failure, with only the
// completed cells).
inline FeatureMatrix extract_matrix(const Dataset& ds, const QuerySet& qs, const Scorer& scorer,
                                    const ChunkingConfig& cfg, const ExtractOptions& opts = {}) {
  cfg.validate();
  if (ds.empty()) throw DataError("extract: dataset is empty");
  if (qs.empty()) throw DataError("extract: query set is empty");
  for (const auto& d : ds.documents()) {
    if (detail::count_words(d.text) == 0) {
      throw DataError("extract: document '" + d.doc_id + "' is whitespace-only");
    }
  }
  std::vector<std::string> doc_ids;
  for (const auto& d : ds.documents()) doc_ids.push_back(d.doc_id);
  FeatureMatrix out(doc_ids, qs.ids(), std::numeric_limits<double>::quiet_NaN());
  out.provenance = extraction_provenance(ds, qs, scorer, cfg);

  std::vector<char> done(out.values.size(), 0);
  if (opts.cache && std::filesystem::exists(*opts.cache)) {
    detail::reuse_cached_cells(load_feature_matrix(*opts.cache), out.provenance, out, done);
  }
  std::vector<std::size_t> todo;
  for (std::size_t i = 0; i < done.size(); ++i) {
    if (!done[i]) todo.push_back(i);
  }
  const std::size_t total = out.values.size();
  std::size_t completed = total - todo.size();

  std::atomic<std::size_t> next{0};
  std::atomic<bool> stop{false};
  std::exception_ptr failure;
  std::mutex mu;
  auto worker = [&] {
    while (!stop.load()) {
      const std::size_t k = next.fetch_add(1);
      if (k >= todo.size()) return;
      const std::size_t cell = todo[k];
      const std::size_t r = cell / out.cols();
      const std::size_t c = cell % out.cols();
      try {
        const double v = score_text(ds[r].text, qs[c], scorer, cfg);
        std::lock_guard lock(mu);
        out.values[cell] = v;
        ++completed;
        if (opts.progress) opts.progress(completed, total);
      } catch (...) {
        std::lock_guard lock(mu);
        if (!failure) failure = std::current_exception();
        stop = true;
      }
    }
  };
  const std::size_t n_workers =
      std::max<std::size_t>(1, std::min(todo.size(), opts.workers ? opts.workers : scorer.max_inflight()));
  if (!todo.empty()) {
    std::vector<std::jthread> pool;
    for (std::size_t i = 0; i + 1 < n_workers; ++i) pool.emplace_back(worker);
    worker();
  }
  if (opts.cache) save_feature_matrix(out, *opts.cache);
  if (failure) std::rethrow_exception(failure);
  return out;
}

}  // namespace nlfeat

#endif  // NLFEAT_EXTRACT_HPP_
