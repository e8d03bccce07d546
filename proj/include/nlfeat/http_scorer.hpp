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

#ifndef NLFEAT_HTTP_SCORER_HPP_
#define NLFEAT_HTTP_SCORER_HPP_

#include <chrono>
#include <cmath>
#include <condition_variable>
#include <cstdlib>
#include <mutex>
#include <optional>
#include <string>
#include <thread>

#include "httplib.h"
#include "json.hpp"
#include "nlfeat/error.hpp"
#include "nlfeat/scorer.hpp"

namespace nlfeat {

struct HttpScorerOptions {
  std::string endpoint;  // e.g. http://127.0.0.1:8081 or .../v1/score
  std::optional<std::string> bearer_token;
  std::size_t max_inflight = 8;
  int attempts = 3;
  std::chrono::milliseconds initial_backoff{200};
  std::chrono::milliseconds timeout{60000};
};

// SCORER_ENDPOINT, SCORER_TOKEN and SCORER_MAX_INFLIGHT override the
// corresponding fields of `base` when set.
inline HttpScorerOptions http_options_from_env(HttpScorerOptions base) {
  if (const char* e = std::getenv("SCORER_ENDPOINT"); e && *e) base.endpoint = e;
  if (const char* t = std::getenv("SCORER_TOKEN"); t && *t) base.bearer_token = t;
  if (const char* m = std::getenv("SCORER_MAX_INFLIGHT"); m && *m) {
    const long v = std::strtol(m, nullptr, 10);
    if (v <= 0) throw UsageError("SCORER_MAX_INFLIGHT must be a positive integer");
    base.max_inflight = static_cast<std::size_t>(v);
  }
  return base;
}

// Parses a POST /v1/score response body. Throws kSchema with the raw body on
// any mismatch.
inline ScoreResponse parse_score_response(const std::string& body) {
  auto schema_error = [&](const std::string& why) {
    return ScorerError(ScorerError::Reason::kSchema, "scorer response " + why + "; body: " + body);
  };
  json doc;
  try {
    doc = json::parse(body);
  } catch (const json::parse_error&) {
    throw schema_error("is not valid JSON");
  }
  if (!doc.is_object() || !doc.contains("logprobs") || !doc["logprobs"].is_object()) {
    throw schema_error("lacks object \"logprobs\"");
  }
  const auto& lp = doc["logprobs"];
  for (const char* key : {"yes", "no"}) {
    if (!lp.contains(key)) throw schema_error(std::string("is missing candidate \"") + key + "\"");
    if (!lp[key].is_number()) throw schema_error(std::string("has non-numeric \"") + key + "\"");
  }
  ScoreResponse r;
  r.logprob_yes = lp["yes"].get<double>();
  r.logprob_no = lp["no"].get<double>();
  if (!std::isfinite(r.logprob_yes) || !std::isfinite(r.logprob_no)) {
    throw schema_error("has non-finite log-probabilities");
  }
  if (doc.contains("prompt_token_count") && !doc["prompt_token_count"].is_null()) {
    if (!doc["prompt_token_count"].is_number_integer() || doc["prompt_token_count"].get<long long>() < 0) {
      throw schema_error("has invalid \"prompt_token_count\"");
    }
    r.prompt_token_count = doc["prompt_token_count"].get<std::int64_t>();
  }
  return r;
}

inline std::string score_request_body(const ScoreRequest& request) {
  return json{{"prompt", request.prompt}, {"candidates", request.candidates}}.dump();
}

class HttpScorer final : public Scorer {
 public:
  explicit HttpScorer(HttpScorerOptions options) : options_(std::move(options)) {
    if (options_.endpoint.empty()) throw UsageError("http scorer: endpoint is empty");
    if (options_.max_inflight == 0) throw UsageError("http scorer: max_inflight must be positive");
    if (options_.attempts <= 0) throw UsageError("http scorer: attempts must be positive");
    split_endpoint();
  }

  ScoreResponse score(const ScoreRequest& request) const override {
    request.validate();
    Slot slot(*this);
    const std::string body = score_request_body(request);
    std::string last_error;
    auto backoff = options_.initial_backoff;
    for (int attempt = 1; attempt <= options_.attempts; ++attempt) {
      httplib::Client client(base_);
      const auto secs = std::chrono::duration_cast<std::chrono::seconds>(options_.timeout);
      const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(options_.timeout - secs);
      client.set_connection_timeout(secs.count(), usecs.count());
      client.set_read_timeout(secs.count(), usecs.count());
      client.set_write_timeout(secs.count(), usecs.count());
      httplib::Headers headers;
      if (options_.bearer_token) headers.emplace("Authorization", "Bearer " + *options_.bearer_token);
      auto res = client.Post(path_, headers, body, "application/json");
      if (!res) {
        last_error = "transport error: " + httplib::to_string(res.error());
      } else if (res->status >= 200 && res->status < 300) {
        return parse_score_response(res->body);
      } else if (res->status == 429 || res->status >= 500) {
        last_error = "HTTP " + std::to_string(res->status);
      } else {
        throw ScorerError(ScorerError::Reason::kHttpStatus,
                          "scorer returned HTTP " + std::to_string(res->status) + "; body: " + res->body);
      }
      if (attempt < options_.attempts) {
        std::this_thread::sleep_for(backoff);
        backoff *= 2;
      }
    }
    throw ScorerError(ScorerError::Reason::kUnavailable,
                      "scorer unavailable at " + base_ + path_ + " after " +
                          std::to_string(options_.attempts) + " attempts (" + last_error + ")");
  }

  std::string identity() const override { return "http:" + base_ + path_; }

  std::size_t max_inflight() const override { return options_.max_inflight; }

 private:
  // Holds one of max_inflight permits for the duration of a request.
  class Slot {
   public:
    explicit Slot(const HttpScorer& s) : s_(s) {
      std::unique_lock lock(s_.mu_);
      s_.cv_.wait(lock, [&] { return s_.inflight_ < s_.options_.max_inflight; });
      ++s_.inflight_;
    }
    ~Slot() {
      {
        std::lock_guard lock(s_.mu_);
        --s_.inflight_;
      }
      s_.cv_.notify_one();
    }
    Slot(const Slot&) = delete;
    Slot& operator=(const Slot&) = delete;

   private:
    const HttpScorer& s_;
  };

  void split_endpoint() {
    const std::string& url = options_.endpoint;
    const auto scheme_end = url.find("://");
    const auto host_start = scheme_end == std::string::npos ? 0 : scheme_end + 3;
    const auto path_start = url.find('/', host_start);
    base_ = path_start == std::string::npos ? url : url.substr(0, path_start);
    std::string path = path_start == std::string::npos ? "" : url.substr(path_start);
    while (!path.empty() && path.back() == '/') path.pop_back();
    if (path.size() < 9 || path.compare(path.size() - 9, 9, "/v1/score") != 0) path += "/v1/score";
    path_ = path;
  }

  HttpScorerOptions options_;
  std::string base_;
  std::string path_;
  mutable std::mutex mu_;
  mutable std::condition_variable cv_;
  mutable std::size_t inflight_ = 0;
};

}  // namespace nlfeat

#endif  // NLFEAT_HTTP_SCORER_HPP_
