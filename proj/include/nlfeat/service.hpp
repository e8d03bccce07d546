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

#ifndef NLFEAT_SERVICE_HPP_
#define NLFEAT_SERVICE_HPP_

#include <algorithm>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "httplib.h"
#include "json.hpp"
#include "nlfeat/core.hpp"
#include "nlfeat/experiments.hpp"
#include "nlfeat/extract.hpp"
#include "nlfeat/linear.hpp"

namespace nlfeat {

struct ServiceOptions {
  std::filesystem::path state_dir;
  std::string dataset;
  // Seeds the query set on first start; later starts read the state dir.
  std::string queries;
  std::string downstream;
  std::shared_ptr<const Scorer> scorer;
  ChunkingConfig chunking;
  ExperimentConfig experiments;  // defaults for POST /experiments/*
  std::size_t workers = 2;
  std::string bearer_token;  // empty disables the check
};

enum class JobStatus { kQueued, kRunning, kDone, kFailed };

inline std::string_view to_string(JobStatus s) {
  switch (s) {
    case JobStatus::kQueued: return "queued";
    case JobStatus::kRunning: return "running";
    case JobStatus::kDone: return "done";
    case JobStatus::kFailed: return "failed";
  }
  return "failed";
}

inline JobStatus job_status_from_string(const std::string& s) {
  if (s == "queued") return JobStatus::kQueued;
  if (s == "running") return JobStatus::kRunning;
  if (s == "done") return JobStatus::kDone;
  if (s == "failed") return JobStatus::kFailed;
  throw DataError("unknown job status '" + s + "'");
}

struct Job {
  std::string job_id;
  std::string kind;  // extract | train | experiment
  JobStatus status = JobStatus::kQueued;
  std::size_t completed = 0;
  std::size_t total = 0;
  json params = json::object();
  json result;
  std::string error;
  std::string address;  // content address; identical requests share a job

  // The only legal moves are queued -> running -> {done, failed}.
  void advance(JobStatus next) {
    const bool ok = (status == JobStatus::kQueued && next == JobStatus::kRunning) ||
                    (status == JobStatus::kRunning && (next == JobStatus::kDone || next == JobStatus::kFailed));
    if (!ok) {
      throw std::logic_error("illegal job transition " + std::string(to_string(status)) + " -> " +
                             std::string(to_string(next)));
    }
    status = next;
  }
};

inline json job_to_json(const Job& j) {
  json out = {{"job_id", j.job_id},
              {"kind", j.kind},
              {"status", to_string(j.status)},
              {"progress", {{"completed", j.completed}, {"total", j.total}}},
              {"params", j.params},
              {"result", j.result},
              {"address", j.address}};
  if (!j.error.empty()) out["error"] = j.error;
  return out;
}

inline Job job_from_json(const json& j) {
  Job out;
  out.job_id = j.at("job_id").get<std::string>();
  out.kind = j.at("kind").get<std::string>();
  out.status = job_status_from_string(j.at("status").get<std::string>());
  out.completed = j.at("progress").at("completed").get<std::size_t>();
  out.total = j.at("progress").at("total").get<std::size_t>();
  out.params = j.value("params", json::object());
  out.result = j.value("result", json());
  out.error = j.value("error", std::string());
  out.address = j.value("address", std::string());
  return out;
}

// A registered model plus what it was trained against. Immutable.
struct ModelRecord {
  std::string model_id;
  std::string variant;    // binary | continuous
  std::string query_set;  // with-custom | without-custom
  std::uint64_t query_version = 0;
  json queries;  // query-set snapshot at training time
  LinearModel model;
  std::string parent;  // set for pruned models
};

inline json model_record_to_json(const ModelRecord& r) {
  return {{"model_id", r.model_id},
          {"variant", r.variant},
          {"query_set", r.query_set},
          {"query_version", r.query_version},
          {"queries", r.queries},
          {"model", model_to_json(r.model)},
          {"parent", r.parent}};
}

inline ModelRecord model_record_from_json(const json& j) {
  ModelRecord r;
  r.model_id = j.at("model_id").get<std::string>();
  r.variant = j.at("variant").get<std::string>();
  r.query_set = j.at("query_set").get<std::string>();
  r.query_version = j.at("query_version").get<std::uint64_t>();
  r.queries = j.at("queries");
  r.model = model_from_json(j.at("model"));
  r.parent = j.value("parent", std::string());
  return r;
}

namespace detail {

struct HttpError : std::runtime_error {
  int status;
  HttpError(int s, const std::string& what) : std::runtime_error(what), status(s) {}
};

inline json read_json_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw DataError("cannot read state file '" + p.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DataError("corrupt state file '" + p.string() + "': " + e.what());
  }
}

inline json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  try {
    return json::parse(req.body);
  } catch (const json::parse_error& e) {
    throw HttpError(400, std::string("malformed JSON body: ") + e.what());
  }
}

}  // namespace detail

// Single-process pipeline server over file-backed state:
//   <state>/queries.json        versioned query set
//   <state>/models/<id>.json    immutable model registry
//   <state>/jobs/<id>.json      job records
//   <state>/features/<addr>.csv content-addressed extraction caches
//   <state>/experiments/<job>/  experiment reports
class Service {
 public:
  explicit Service(ServiceOptions options) : opt_(std::move(options)) {
    if (!opt_.scorer) throw UsageError("service: a scorer is required");
    if (opt_.state_dir.empty()) throw UsageError("service: a state directory is required");
    std::filesystem::create_directories(opt_.state_dir / "models");
    std::filesystem::create_directories(opt_.state_dir / "jobs");
    dataset_ = load_dataset(opt_.dataset);
    if (!opt_.downstream.empty()) downstream_ = load_queries(opt_.downstream);
    load_state();
    install_routes();
    for (std::size_t i = 0; i < std::max<std::size_t>(1, opt_.workers); ++i) {
      workers_.emplace_back([this] { worker_loop(); });
    }
  }

  ~Service() { stop(); }

  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  // Binds and serves on a background thread; port 0 picks a free port.
  int start(const std::string& host = "127.0.0.1", int port = 0) {
    const int bound = port == 0 ? server_.bind_to_any_port(host) : (server_.bind_to_port(host, port) ? port : -1);
    if (bound < 0) throw UsageError("cannot bind " + host + ":" + std::to_string(port) + " (port busy?)");
    listener_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    return bound;
  }

  // Serves on the calling thread until stop() is called elsewhere.
  void listen(const std::string& host, int port) {
    if (!server_.bind_to_port(host, port)) throw UsageError("cannot bind " + host + ":" + std::to_string(port));
    server_.listen_after_bind();
  }

  // Stops accepting requests, lets running jobs finish, and joins workers.
  // Jobs still queued stay queued on disk and resume on the next start.
  void stop() {
    server_.stop();
    if (listener_.joinable()) listener_.join();
    {
      std::lock_guard lock(mu_);
      if (stopping_) return;
      stopping_ = true;
    }
    cv_.notify_all();
    for (auto& t : workers_) {
      if (t.joinable()) t.join();
    }
  }

  httplib::Server& server() { return server_; }

  // Blocks until the job leaves queued/running (tests and the CLI use this).
  Job wait_for(const std::string& job_id) {
    std::unique_lock lock(mu_);
    done_cv_.wait(lock, [&] {
      auto it = jobs_.find(job_id);
      return it == jobs_.end() || it->second.status == JobStatus::kDone || it->second.status == JobStatus::kFailed;
    });
    auto it = jobs_.find(job_id);
    if (it == jobs_.end()) throw DataError("unknown job '" + job_id + "'");
    return it->second;
  }

 private:
  // ---- state ----

  std::filesystem::path queries_path() const { return opt_.state_dir / "queries.json"; }

  void load_state() {
    if (std::filesystem::exists(queries_path())) {
      const auto j = detail::read_json_file(queries_path());
      try {
        version_ = j.at("version").get<std::uint64_t>();
        queries_ = queries_from_json(j);
      } catch (const std::exception& e) {
        throw DataError("corrupt state file '" + queries_path().string() + "': " + e.what());
      }
    } else if (!opt_.queries.empty()) {
      queries_ = load_queries(opt_.queries);
      version_ = 1;
      persist_queries();
    } else {
      queries_ = QuerySet("queries", {});
      version_ = 0;
      persist_queries();
    }
    for (const auto& e : std::filesystem::directory_iterator(opt_.state_dir / "models")) {
      if (e.path().extension() != ".json") continue;
      try {
        auto r = model_record_from_json(detail::read_json_file(e.path()));
        models_.emplace(r.model_id, std::move(r));
      } catch (const DataError&) {
        throw;
      } catch (const std::exception& ex) {
        throw DataError("corrupt state file '" + e.path().string() + "': " + ex.what());
      }
    }
    std::vector<std::string> requeue;
    for (const auto& e : std::filesystem::directory_iterator(opt_.state_dir / "jobs")) {
      if (e.path().extension() != ".json") continue;
      Job job;
      try {
        job = job_from_json(detail::read_json_file(e.path()));
      } catch (const DataError&) {
        throw;
      } catch (const std::exception& ex) {
        throw DataError("corrupt state file '" + e.path().string() + "': " + ex.what());
      }
      if (job.status == JobStatus::kRunning) {
        job.advance(JobStatus::kFailed);
        job.error = "interrupted: server stopped while the job was running";
        persist_job(job);
      } else if (job.status == JobStatus::kQueued) {
        requeue.push_back(job.job_id);
      }
      next_job_ = std::max(next_job_, job_number(job.job_id) + 1);
      jobs_.emplace(job.job_id, std::move(job));
    }
    std::sort(requeue.begin(), requeue.end());
    for (auto& id : requeue) queue_.push_back(id);
  }

  static std::uint64_t job_number(const std::string& id) {
    const auto dash = id.rfind('-');
    try {
      return std::stoull(id.substr(dash + 1));
    } catch (const std::exception&) {
      return 0;
    }
  }

  void persist_queries() {
    json j = queries_to_json(queries_);
    j["version"] = version_;
    detail::write_atomically(queries_path(), j.dump(2) + "\n");
  }

  void persist_job(const Job& job) {
    detail::write_atomically(opt_.state_dir / "jobs" / (job.job_id + ".json"), job_to_json(job).dump(2) + "\n");
  }

  void persist_model(const ModelRecord& r) {
    detail::write_atomically(opt_.state_dir / "models" / (r.model_id + ".json"),
                             model_record_to_json(r).dump(2) + "\n");
  }

  // Extraction address: dataset x query-set version x scorer identity.
  std::string address(std::uint64_t version, const std::string& extra = {}) const {
    return ContentHasher()
        .add(dataset_.content_hash())
        .add(version)
        .add(opt_.scorer->identity())
        .add(opt_.chunking.to_json().dump())
        .add(extra)
        .hex();
  }

  std::mutex& address_lock(const std::string& addr) {
    std::lock_guard lock(address_mu_);
    auto& m = address_locks_[addr];
    if (!m) m = std::make_unique<std::mutex>();
    return *m;
  }

  // ---- jobs ----

  using ProgressFn = std::function<void(std::size_t, std::size_t)>;
  using JobBody = std::function<json(Job&, const ProgressFn&)>;

  // Returns the existing job for `addr` unless it failed.
  std::pair<Job, bool> submit(const std::string& kind, json params, const std::string& addr, JobBody body) {
    std::lock_guard lock(mu_);
    if (!addr.empty()) {
      for (const auto& [id, j] : jobs_) {
        if (j.address == addr && j.kind == kind && j.status != JobStatus::kFailed) return {j, false};
      }
    }
    Job job;
    char id[32];
    std::snprintf(id, sizeof(id), "job-%06llu", static_cast<unsigned long long>(next_job_++));
    job.job_id = id;
    job.kind = kind;
    job.params = std::move(params);
    job.address = addr;
    persist_job(job);
    jobs_.emplace(job.job_id, job);
    bodies_.emplace(job.job_id, std::move(body));
    queue_.push_back(job.job_id);
    cv_.notify_one();
    return {job, true};
  }

  void worker_loop() {
    for (;;) {
      std::string id;
      JobBody body;
      {
        std::unique_lock lock(mu_);
        cv_.wait(lock, [&] { return stopping_ || !queue_.empty(); });
        if (stopping_) return;
        id = queue_.front();
        queue_.pop_front();
        auto& job = jobs_.at(id);
        auto b = bodies_.find(id);
        body = b == bodies_.end() ? rebuild_body(job) : std::move(b->second);
        if (b != bodies_.end()) bodies_.erase(b);
        job.advance(JobStatus::kRunning);
        persist_job(job);
      }
      json result;
      std::string error;
      try {
        Job snapshot;
        {
          std::lock_guard lock(mu_);
          snapshot = jobs_.at(id);
        }
        auto progress = [this, &id](std::size_t done, std::size_t total) {
          std::lock_guard lock(mu_);
          auto& j = jobs_.at(id);
          j.completed = done;
          j.total = total;
        };
        if (!body) throw DataError("job cannot be resumed");
        result = body(snapshot, progress);
      } catch (const std::exception& e) {
        error = e.what();
      }
      {
        std::lock_guard lock(mu_);
        auto& job = jobs_.at(id);
        if (error.empty()) {
          job.result = std::move(result);
          job.advance(JobStatus::kDone);
        } else {
          job.error = error;
          job.advance(JobStatus::kFailed);
        }
        persist_job(job);
      }
      done_cv_.notify_all();
    }
  }

  // Jobs restored from disk carry their parameters; rebuild their bodies.
  JobBody rebuild_body(const Job& job) {
    if (job.kind == "extract") return extract_body(job.params);
    if (job.kind == "train") return train_body(job.params);
    if (job.kind == "experiment") return experiment_body(job.params);
    return {};
  }

  // ---- pipeline calls ----

  struct Snapshot {
    QuerySet queries;
    std::uint64_t version = 0;
  };

  Snapshot snapshot() const {
    std::lock_guard lock(mu_);
    return {queries_, version_};
  }

  FeatureMatrix features_for(const QuerySet& qs, std::uint64_t version, const Dataset& ds,
                             const std::function<void(std::size_t, std::size_t)>& progress,
                             const std::string& extra = {}) {
    const auto addr = address(version, extra);
    std::lock_guard lock(address_lock(addr));
    ExtractOptions opts;
    opts.cache = opt_.state_dir / "features" / (addr + ".csv");
    opts.progress = progress;
    return extract_matrix(ds, qs, *opt_.scorer, opt_.chunking, opts);
  }

  JobBody extract_body(const json& params) {
    return [this, params](Job&, const ProgressFn& progress) -> json {
      const auto version = params.at("query_version").get<std::uint64_t>();
      QuerySet qs = queries_from_json(params.at("queries"));
      if (params.contains("query_ids")) {
        const auto ids = params["query_ids"].get<std::set<std::string>>();
        qs = qs.filtered([&](const FeatureQuery& q) { return ids.count(q.query_id) > 0; });
      }
      Dataset ds = dataset_;
      std::string extra;
      if (params.contains("doc_ids")) {
        std::vector<Document> docs;
        for (const auto& id : params["doc_ids"]) {
          const auto* d = dataset_.find(id.get<std::string>());
          if (!d) throw DataError("unknown doc_id '" + id.get<std::string>() + "'");
          docs.push_back(*d);
          extra += id.get<std::string>() + ",";
        }
        ds = Dataset(std::move(docs));
      }
      if (params.contains("query_ids")) extra += "|" + params["query_ids"].dump();
      const auto m = features_for(qs, version, ds, progress, extra);
      progress(m.values.size(), m.values.size());
      json out = {{"query_version", version},
                  {"provenance_hash", m.provenance["content_hash"]},
                  {"rows", m.rows()},
                  {"cols", m.cols()}};
      if (m.values.size() <= 10000) {
        out["doc_ids"] = m.doc_ids;
        out["query_ids"] = m.query_ids;
        out["values"] = m.values;
      }
      return out;
    };
  }

  static std::string model_id_for(const std::string& task, const std::string& variant, const std::string& qs,
                                   std::uint64_t version, const TrainConfig& cfg, const std::string& addr) {
    return ContentHasher()
        .add(task)
        .add(variant)
        .add(qs)
        .add(version)
        .add(cfg.to_json().dump())
        .add(addr)
        .hex();
  }

  // Train-split features and labels for a model's inputs.
  struct TrainingData {
    FeatureMatrix features;
    std::vector<int> labels;
  };

  TrainingData training_data(const QuerySet& all, std::uint64_t version, const std::string& task,
                             const std::string& variant, const std::string& query_set,
                             const std::function<void(std::size_t, std::size_t)>& progress) {
    const Task* group = dataset_.find_task(task);
    if (!dataset_.has_label(task) || (group && group->type == TaskType::kMultiLabelGroup)) {
      throw DataError("unknown binary task '" + task + "'");
    }
    const FeatureMatrix full = features_for(all, version, dataset_, progress);
    std::vector<std::string> cols;
    for (const auto& q : all.queries()) {
      if (query_set == "with-custom" || !q.custom) cols.push_back(q.query_id);
    }
    if (cols.empty()) throw DataError("no feature columns for query set '" + query_set + "'");
    FeatureMatrix x = full.select_columns(cols);
    if (variant == "binary") x = binarize(x);
    const auto rows = labeled_rows(dataset_, Split::kTrain, task);
    return {detail::select_rows(x, rows), detail::labels_of(dataset_, rows, task)};
  }

  JobBody train_body(const json& params) {
    return [this, params](Job&, const ProgressFn& progress) -> json {
      const auto version = params.at("query_version").get<std::uint64_t>();
      const QuerySet qs = queries_from_json(params.at("queries"));
      const auto task = params.at("task").get<std::string>();
      const auto variant = params.at("variant").get<std::string>();
      const auto query_set = params.at("query_set").get<std::string>();
      const TrainConfig cfg = TrainConfig::from_json(params.at("config"));
      const auto data = training_data(qs, version, task, variant, query_set, progress);
      ModelRecord r;
      r.model_id = params.at("model_id").get<std::string>();
      r.variant = variant;
      r.query_set = query_set;
      r.query_version = version;
      r.queries = params.at("queries");
      r.model = train(data.features, data.labels, cfg, task);
      register_model(r);
      return {{"model_id", r.model_id}, {"train_fingerprint", r.model.train_fingerprint}};
    };
  }

  void register_model(const ModelRecord& r) {
    std::lock_guard lock(mu_);
    if (models_.count(r.model_id)) return;
    persist_model(r);
    models_.emplace(r.model_id, r);
  }

  JobBody experiment_body(const json& params) {
    return [this, params](Job& job, const ProgressFn& progress) -> json {
      const auto kind = params.at("experiment").get<std::string>();
      ExperimentConfig cfg = opt_.experiments;
      cfg.chunking = opt_.chunking;
      if (params.contains("overrides")) {
        KeyValues kv;
        for (const auto& [k, v] : params["overrides"].items()) {
          if (v.is_string()) {
            kv[k] = v.get<std::string>();
          } else if (v.is_array()) {
            std::string joined;
            for (const auto& item : v) {
              if (!joined.empty()) joined += ",";
              joined += item.is_string() ? item.get<std::string>() : item.dump();
            }
            kv[k] = joined;
          } else {
            kv[k] = v.dump();
          }
        }
        cfg = apply_key_values(cfg, kv);
      }
      cfg.output_dir = (opt_.state_dir / "experiments" / job.job_id).string();
      const auto version = params.at("query_version").get<std::uint64_t>();
      const QuerySet qs = queries_from_json(params.at("queries"));
      const auto addr = address(version);
      ExtractOptions opts;
      opts.cache = opt_.state_dir / "features" / (addr + ".csv");
      opts.progress = progress;
      std::unique_lock lock(address_lock(addr));
      Workspace ws = make_workspace(cfg, dataset_, qs, downstream_, opt_.scorer, opts);
      lock.unlock();
      json out = {{"output_dir", cfg.output_dir}};
      if (kind == "grid") {
        out["report"] = grid_to_json(run_grid(ws));
      } else if (kind == "curve") {
        json curves = json::object();
        for (const auto& [system, points] : run_curves(ws)) {
          json arr = json::array();
          for (const auto& p : points) arr.push_back(curve_point_to_json(p));
          curves[system] = arr;
        }
        out["report"] = curves;
      } else {
        json arr = json::array();
        for (const auto& a : run_ablation(ws)) arr.push_back(ablation_to_json(a));
        out["report"] = arr;
      }
      return out;
    };
  }

  // ---- HTTP ----

  static void reply(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  template <class F>
  auto guarded(F handler) {
    return [this, handler](const httplib::Request& req, httplib::Response& res) {
      try {
        handler(req, res);
      } catch (const detail::HttpError& e) {
        reply(res, e.status, {{"error", e.what()}});
      } catch (const UsageError& e) {
        reply(res, 400, {{"error", e.what()}, {"kind", "usage"}});
      } catch (const DataError& e) {
        reply(res, 422, {{"error", e.what()}, {"kind", "data"}});
      } catch (const ScorerError& e) {
        reply(res, 502, {{"error", e.what()}, {"kind", "scorer"}});
      } catch (const json::exception& e) {
        reply(res, 400, {{"error", std::string("bad request: ") + e.what()}});
      } catch (const std::exception& e) {
        reply(res, 500, {{"error", e.what()}});
      }
    };
  }

  json queries_view() const {
    json j = queries_to_json(queries_);
    j["version"] = version_;
    return j;
  }

  // Replaces the query list and bumps the version; caller holds mu_.
  void commit_queries(std::vector<FeatureQuery> list) {
    QuerySet next(queries_.name(), std::move(list));
    // Only task names are checked; dataset reference annotations may name
    // queries that have since been deleted.
    for (const auto& q : next.queries()) {
      for (const auto& [task, _] : q.expected_support) {
        if (!dataset_.has_label(task)) {
          throw DataError("query '" + q.query_id + "': expected_support names unknown task '" + task + "'");
        }
      }
    }
    queries_ = std::move(next);
    ++version_;
    persist_queries();
  }

  const ModelRecord& model_or_404(const std::string& id) const {
    auto it = models_.find(id);
    if (it == models_.end()) throw detail::HttpError(404, "unknown model '" + id + "'");
    return it->second;
  }

  void install_routes() {
    auto& s = server_;
    // SO_REUSEADDR only: SO_REUSEPORT would let a second server share a busy port.
    s.set_socket_options([](socket_t sock) {
      int yes = 1;
      setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const char*>(&yes), sizeof(yes));
    });
    s.set_error_handler([](const httplib::Request& req, httplib::Response& res) {
      if (res.body.empty()) {
        reply(res, res.status, {{"error", "no route for " + req.method + " " + req.path}});
      }
    });
    s.set_pre_routing_handler([this](const httplib::Request& req, httplib::Response& res) {
      if (opt_.bearer_token.empty() || req.path == "/health") return httplib::Server::HandlerResponse::Unhandled;
      if (req.get_header_value("Authorization") != "Bearer " + opt_.bearer_token) {
        reply(res, 401, {{"error", "missing or invalid bearer token"}});
        return httplib::Server::HandlerResponse::Handled;
      }
      return httplib::Server::HandlerResponse::Unhandled;
    });

    s.Get("/health", guarded([](const httplib::Request&, httplib::Response& res) { reply(res, 200, {{"status", "ok"}}); }));

    s.Get("/queries", guarded([this](const httplib::Request&, httplib::Response& res) {
      std::lock_guard lock(mu_);
      reply(res, 200, queries_view());
    }));

    s.Get(R"(/queries/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
      std::lock_guard lock(mu_);
      const auto* q = queries_.find(req.matches[1]);
      if (!q) throw detail::HttpError(404, "unknown query '" + std::string(req.matches[1]) + "'");
      reply(res, 200, query_to_json(*q));
    }));

    s.Post("/queries", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto q = query_from_json(detail::parse_body(req), 0);
      std::lock_guard lock(mu_);
      if (queries_.find(q.query_id)) throw detail::HttpError(409, "query '" + q.query_id + "' already exists");
      auto list = queries_.queries();
      list.push_back(q);
      commit_queries(std::move(list));
      reply(res, 201, {{"version", version_}, {"query", query_to_json(q)}});
    }));

    s.Put(R"(/queries/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
      auto body = detail::parse_body(req);
      const std::string id = req.matches[1];
      if (!body.contains("query_id")) body["query_id"] = id;
      const auto q = query_from_json(body, 0);
      if (q.query_id != id) throw detail::HttpError(400, "query_id in body does not match the URL");
      std::lock_guard lock(mu_);
      auto idx = queries_.index_of(id);
      if (!idx) throw detail::HttpError(404, "unknown query '" + id + "'");
      auto list = queries_.queries();
      list[*idx] = q;
      commit_queries(std::move(list));
      reply(res, 200, {{"version", version_}, {"query", query_to_json(q)}});
    }));

    s.Delete(R"(/queries/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const std::string id = req.matches[1];
      std::lock_guard lock(mu_);
      if (!queries_.find(id)) throw detail::HttpError(404, "unknown query '" + id + "'");
      auto list = queries_.queries();
      list.erase(std::remove_if(list.begin(), list.end(), [&](const FeatureQuery& q) { return q.query_id == id; }),
                 list.end());
      commit_queries(std::move(list));
      reply(res, 200, {{"version", version_}, {"deleted", id}});
    }));

    s.Post("/extract", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto body = detail::parse_body(req);
      const auto snap = snapshot();
      if (snap.queries.empty()) throw DataError("extract: query set is empty");
      json params = {{"query_version", snap.version}, {"queries", queries_to_json(snap.queries)}};
      std::string extra;
      for (const char* key : {"doc_ids", "query_ids"}) {
        if (body.contains(key)) {
          if (!body[key].is_array()) throw detail::HttpError(400, std::string(key) + " must be an array");
          params[key] = body[key];
          extra += std::string(key) + "=" + body[key].dump();
        }
      }
      auto [job, created] = submit("extract", params, address(snap.version, extra), extract_body(params));
      reply(res, created ? 202 : 200, job_to_json(job));
    }));

    s.Get("/jobs", guarded([this](const httplib::Request&, httplib::Response& res) {
      std::lock_guard lock(mu_);
      json arr = json::array();
      for (const auto& [_, j] : jobs_) arr.push_back(job_to_json(j));
      reply(res, 200, arr);
    }));

    s.Get(R"(/jobs/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
      std::lock_guard lock(mu_);
      auto it = jobs_.find(req.matches[1]);
      if (it == jobs_.end()) throw detail::HttpError(404, "unknown job '" + std::string(req.matches[1]) + "'");
      reply(res, 200, job_to_json(it->second));
    }));

    s.Post("/train", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto body = detail::parse_body(req);
      if (!body.contains("task") || !body["task"].is_string()) throw detail::HttpError(400, "missing \"task\"");
      const auto task = body["task"].get<std::string>();
      const auto variant = body.value("variant", std::string("continuous"));
      const auto query_set = body.value("query_set", std::string("with-custom"));
      if (variant != "binary" && variant != "continuous") throw UsageError("unknown variant '" + variant + "'");
      if (query_set != "with-custom" && query_set != "without-custom") {
        throw UsageError("unknown query_set '" + query_set + "'");
      }
      const TrainConfig cfg = TrainConfig::from_json(body.value("config", json::object()));
      const auto snap = snapshot();
      const auto addr = address(snap.version);
      const auto model_id = model_id_for(task, variant, query_set, snap.version, cfg, addr);
      json params = {{"task", task},
                     {"variant", variant},
                     {"query_set", query_set},
                     {"config", cfg.to_json()},
                     {"query_version", snap.version},
                     {"queries", queries_to_json(snap.queries)},
                     {"model_id", model_id}};
      auto [job, created] = submit("train", params, model_id, train_body(params));
      json out = job_to_json(job);
      out["model_id"] = model_id;
      reply(res, created ? 202 : 200, out);
    }));

    s.Get("/models", guarded([this](const httplib::Request&, httplib::Response& res) {
      std::lock_guard lock(mu_);
      json arr = json::array();
      for (const auto& [id, r] : models_) {
        arr.push_back({{"model_id", id},
                       {"task", r.model.task},
                       {"variant", r.variant},
                       {"query_set", r.query_set},
                       {"query_version", r.query_version},
                       {"stale", r.query_version != version_},
                       {"train_fingerprint", r.model.train_fingerprint},
                       {"parent", r.parent}});
      }
      reply(res, 200, arr);
    }));

    s.Get(R"(/models/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
      std::lock_guard lock(mu_);
      const auto& r = model_or_404(req.matches[1]);
      json out = model_record_to_json(r);
      out["stale"] = r.query_version != version_;
      reply(res, 200, out);
    }));

    s.Get(R"(/models/([^/]+)/coefficients)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      std::lock_guard lock(mu_);
      const auto& r = model_or_404(req.matches[1]);
      reply(res, 200, coefficients_view(r));
    }));

    s.Post(R"(/models/([^/]+)/explain)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto body = detail::parse_body(req);
      if (!body.contains("doc_id") || !body["doc_id"].is_string()) throw detail::HttpError(400, "missing \"doc_id\"");
      ModelRecord r;
      {
        std::lock_guard lock(mu_);
        r = model_or_404(req.matches[1]);
      }
      const auto doc_id = body["doc_id"].get<std::string>();
      const Document* d = dataset_.find(doc_id);
      if (!d) throw detail::HttpError(404, "unknown doc_id '" + doc_id + "'");
      const QuerySet qs = queries_from_json(r.queries);
      FeatureMatrix all = features_for(qs, r.query_version, dataset_, {});
      FeatureMatrix x = all.select_columns(r.model.query_ids);
      if (r.variant == "binary") x = binarize(x);
      const auto e = explain(r.model, feature_row(x, *all.row_of(doc_id)));
      json out = explanation_to_json(e);
      out["model_id"] = r.model_id;
      out["doc_id"] = doc_id;
      out["text"] = d->text;
      if (auto y = d->label(r.model.task)) out["reference_label"] = *y;
      reply(res, 200, out);
    }));

    s.Post(R"(/models/([^/]+)/prune)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto body = detail::parse_body(req);
      const auto drop = body.value("drop", std::set<std::string>());
      const bool retrain = body.value("retrain", false);
      ModelRecord r;
      {
        std::lock_guard lock(mu_);
        r = model_or_404(req.matches[1]);
      }
      LinearModel pruned;
      if (retrain) {
        const auto data = training_data(queries_from_json(r.queries), r.query_version, r.model.task, r.variant,
                                        r.query_set, {});
        const TrainConfig cfg = TrainConfig::from_json(r.model.config);
        pruned = prune(r.model, drop, true, RetrainInputs{data.features, data.labels, cfg});
      } else {
        pruned = prune(r.model, drop, false);
      }
      ModelRecord out = r;
      out.model = std::move(pruned);
      out.parent = r.model_id;
      out.model_id = drop.empty() && !retrain ? r.model_id : out.model.train_fingerprint;
      register_model(out);
      reply(res, out.model_id == r.model_id ? 200 : 201,
            {{"model_id", out.model_id}, {"parent", r.model_id}, {"train_fingerprint", out.model.train_fingerprint}});
    }));

    s.Post(R"(/experiments/(grid|curve|ablation))", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto body = detail::parse_body(req);
      const auto snap = snapshot();
      json params = {{"experiment", std::string(req.matches[1])},
                     {"query_version", snap.version},
                     {"queries", queries_to_json(snap.queries)}};
      if (!body.empty()) params["overrides"] = body;
      const auto addr = ContentHasher().add(params.dump()).add(address(snap.version)).hex();
      auto [job, created] = submit("experiment", params, addr, experiment_body(params));
      reply(res, created ? 202 : 200, job_to_json(job));
    }));
  }

  json coefficients_view(const ModelRecord& r) const {
    const QuerySet qs = queries_from_json(r.queries);
    std::vector<std::size_t> order(r.model.weights.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (r.model.weights[a] != r.model.weights[b]) return r.model.weights[a] > r.model.weights[b];
      return r.model.query_ids[a] < r.model.query_ids[b];
    });
    const std::string& task = r.model.task;
    const auto sep = task.find(kGroupSeparator);
    json coefs = json::array();
    std::size_t rank = 1;
    for (auto j : order) {
      const auto& id = r.model.query_ids[j];
      const auto* q = qs.find(id);
      json support = nullptr;
      if (q) {
        auto it = q->expected_support.find(task);
        if (it == q->expected_support.end() && sep != std::string::npos) {
          it = q->expected_support.find(task.substr(0, sep));
        }
        if (it != q->expected_support.end()) support = it->second == Support::kSupports ? "supports" : "not-relevant";
      }
      coefs.push_back({{"query_id", id},
                       {"question", q ? json(q->question) : json(nullptr)},
                       {"weight", r.model.weights[j]},
                       {"rank", rank++},
                       {"expected_support", support}});
    }
    return {{"model_id", r.model_id},
            {"task", task},
            {"intercept", r.model.intercept},
            {"train_fingerprint", r.model.train_fingerprint},
            {"query_version", r.query_version},
            {"current_query_version", version_},
            {"stale", r.query_version != version_},
            {"coefficients", coefs}};
  }

  ServiceOptions opt_;
  Dataset dataset_;
  std::optional<QuerySet> downstream_;

  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::condition_variable done_cv_;
  QuerySet queries_;
  std::uint64_t version_ = 0;
  std::map<std::string, ModelRecord> models_;
  std::map<std::string, Job> jobs_;
  std::map<std::string, JobBody> bodies_;
  std::deque<std::string> queue_;
  std::uint64_t next_job_ = 1;
  bool stopping_ = false;

  std::mutex address_mu_;
  std::map<std::string, std::unique_ptr<std::mutex>> address_locks_;

  httplib::Server server_;
  std::thread listener_;
  std::vector<std::thread> workers_;
};

}  // namespace nlfeat

#endif  // NLFEAT_SERVICE_HPP_
