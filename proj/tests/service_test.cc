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

#include "nlfeat/service.hpp"

#include <chrono>
#include <cmath>
#include <thread>

#include "gtest/gtest.h"
#include "nlfeat/synth.hpp"
#include "test_util.hpp"

namespace nlfeat {
namespace {

using testing::TempDir;
using testing::write_file;

class DownScorer final : public Scorer {
 public:
  ScoreResponse score(const ScoreRequest&) const override {
    throw ScorerError(ScorerError::Reason::kUnavailable, "scorer unreachable: connection refused");
  }
  std::string identity() const override { return "down"; }
};

struct Files {
  std::string dataset, queries, downstream;
  MockLexicon lexicon;
};

// 2 documents x 3 queries.
Files tiny_files(const TempDir& dir, bool single_class = false) {
  write_file(dir.file("d.jsonl"),
             std::string("{\"doc_id\":\"a\",\"text\":\"cough and fever\",\"labels\":{\"sick\":1},\"split\":\"train\"}\n") +
                 "{\"doc_id\":\"b\",\"text\":\"feeling fine\",\"labels\":{\"sick\":" + (single_class ? "1" : "0") +
                 "},\"split\":\"train\"}\n");
  write_file(dir.file("q.json"), R"({"name":"tiny","queries":[
    {"query_id":"cough","question":"Does the patient cough?","expected_support":{"sick":"supports"}},
    {"query_id":"fever","question":"Does the patient have a fever?"},
    {"query_id":"fine","question":"Is the patient fine?","custom":true,"expected_support":{"sick":"not-relevant"}}]})");
  MockLexicon lex;
  lex.entries["cough"] = {{"cough"}, 3.0, -1.5};
  lex.entries["fever"] = {{"fever"}, 3.0, -1.5};
  lex.entries["fine"] = {{"fine"}, 3.0, -1.5};
  lex.entries["new"] = {{"and"}, 3.0, -1.5};
  return {dir.file("d.jsonl"), dir.file("q.json"), "", lex};
}

Files synth_files(const TempDir& dir) {
  SynthConfig sc;
  sc.n_train = 200;
  sc.n_test = 80;
  const auto c = generate_synthetic(sc);
  const auto p = write_synthetic(c, dir.path() / "synth");
  return {p.dataset.string(), p.queries.string(), p.downstream.string(), c.lexicon};
}

ServiceOptions options(const TempDir& dir, const Files& f, std::shared_ptr<const Scorer> scorer = nullptr) {
  ServiceOptions o;
  o.state_dir = dir.path() / "state";
  o.dataset = f.dataset;
  o.queries = f.queries;
  o.downstream = f.downstream;
  o.scorer = scorer ? scorer : std::make_shared<MockScorer>(f.lexicon);
  o.chunking.token_unit = TokenUnit::kWhitespaceWords;
  o.experiments.bootstrap_resamples = 100;
  o.experiments.tfidf_sizes = {30};
  o.experiments.curve_systems = {"inferred-continuous-with-custom"};
  o.experiments.fractions = {0.5, 1.0};
  o.experiments.ablation_repeats = 2;
  return o;
}

class Running {
 public:
  explicit Running(ServiceOptions o) : svc_(std::move(o)), port_(svc_.start()), client_("127.0.0.1", port_) {}
  httplib::Client& http() { return client_; }
  Service& svc() { return svc_; }

  json get(const std::string& path, int expect = 200) {
    auto r = client_.Get(path);
    EXPECT_TRUE(r) << path;
    EXPECT_EQ(r->status, expect) << path << " " << r->body;
    return json::parse(r->body);
  }
  json post(const std::string& path, const json& body, int* status = nullptr) {
    auto r = client_.Post(path, body.dump(), "application/json");
    EXPECT_TRUE(r) << path;
    if (status) *status = r->status;
    return json::parse(r->body);
  }
  json await(const std::string& job_id) {
    svc_.wait_for(job_id);
    return get("/jobs/" + job_id);
  }

 private:
  Service svc_;
  int port_;
  httplib::Client client_;
};

TEST(Service, Health) {
  TempDir dir;
  Running s(options(dir, tiny_files(dir)));
  EXPECT_EQ(s.get("/health"), json({{"status", "ok"}}));
}

TEST(Service, QueryCrudRoundTripsAndBumpsVersion) {
  TempDir dir;
  Running s(options(dir, tiny_files(dir)));
  EXPECT_EQ(s.get("/queries")["version"], 1);
  const json q = {{"query_id", "new"},
                  {"question", "Is there a conjunction?"},
                  {"template_id", "cxr"},
                  {"custom", true},
                  {"expected_support", {{"sick", "supports"}}}};
  int status = 0;
  auto created = s.post("/queries", q, &status);
  EXPECT_EQ(status, 201);
  EXPECT_EQ(created["version"], 2);
  EXPECT_EQ(s.get("/queries/new"), q);
  s.post("/queries", q, &status);
  EXPECT_EQ(status, 409);

  json edited = q;
  edited["question"] = "Is there an 'and'?";
  auto r = s.http().Put("/queries/new", edited.dump(), "application/json");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 200);
  EXPECT_EQ(s.get("/queries")["version"], 3);
  EXPECT_EQ(s.get("/queries/new"), edited);
  EXPECT_EQ(s.http().Put("/queries/nope", edited.dump(), "application/json")->status, 400);

  EXPECT_EQ(s.http().Delete("/queries/new")->status, 200);
  EXPECT_EQ(s.get("/queries")["version"], 4);
  s.get("/queries/new", 404);
  EXPECT_EQ(s.http().Delete("/queries/new")->status, 404);
}

TEST(Service, RejectsMalformedQuery) {
  TempDir dir;
  Running s(options(dir, tiny_files(dir)));
  int status = 0;
  s.post("/queries", {{"query_id", "x"}}, &status);
  EXPECT_EQ(status, 422);
  s.post("/queries", {{"query_id", "x"}, {"question", "q?"}, {"expected_support", {{"ghost", "supports"}}}}, &status);
  EXPECT_EQ(status, 422);
  auto r = s.http().Post("/queries", "{not json", "application/json");
  EXPECT_EQ(r->status, 400);
  EXPECT_EQ(s.get("/queries")["version"], 1);
}

TEST(Service, ExtractJobCompletesAndDeduplicates) {
  TempDir dir;
  Running s(options(dir, tiny_files(dir)));
  int first = 0, second = 0;
  const auto a = s.post("/extract", json::object(), &first);
  const auto b = s.post("/extract", json::object(), &second);
  EXPECT_EQ(first, 202);
  EXPECT_EQ(second, 200);
  EXPECT_EQ(a["job_id"], b["job_id"]);
  const auto job = s.await(a["job_id"]);
  EXPECT_EQ(job["status"], "done");
  EXPECT_EQ(job["progress"], json({{"completed", 6}, {"total", 6}}));
  EXPECT_EQ(job["result"]["values"].size(), 6u);
  // cough/fever present in a, absent in b.
  EXPECT_EQ(job["result"]["values"][0], 1.0 / (1.0 + std::exp(-1.5)));
  EXPECT_EQ(job["result"]["values"][3], 1.0 / (1.0 + std::exp(1.5)));
}

TEST(Service, PreviewExtractOnSample) {
  TempDir dir;
  Running s(options(dir, tiny_files(dir)));
  const auto job = s.post("/extract", {{"doc_ids", {"b"}}, {"query_ids", {"fine"}}});
  const auto done = s.await(job["job_id"]);
  ASSERT_EQ(done["status"], "done");
  EXPECT_EQ(done["result"]["values"], json::array({1.0 / (1.0 + std::exp(-1.5))}));
}

TEST(Service, ScorerDownFailsJobWithScorerError) {
  TempDir dir;
  Running s(options(dir, tiny_files(dir), std::make_shared<DownScorer>()));
  const auto job = s.await(s.post("/extract", json::object())["job_id"]);
  EXPECT_EQ(job["status"], "failed");
  EXPECT_NE(job["error"].get<std::string>().find("connection refused"), std::string::npos);
  EXPECT_EQ(s.get("/health")["status"], "ok");
}

TEST(Service, TrainSingleClassFailsWithLinearError) {
  TempDir dir;
  Running s(options(dir, tiny_files(dir, true)));
  const auto job = s.await(s.post("/train", {{"task", "sick"}})["job_id"]);
  EXPECT_EQ(job["status"], "failed");
  EXPECT_NE(job["error"].get<std::string>().find("one positive and one negative"), std::string::npos) << job["error"];
}

TEST(Service, JobStatusMovesForwardOnly) {
  Job j;
  EXPECT_THROW(j.advance(JobStatus::kDone), std::logic_error);
  j.advance(JobStatus::kRunning);
  EXPECT_THROW(j.advance(JobStatus::kQueued), std::logic_error);
  j.advance(JobStatus::kFailed);
  EXPECT_THROW(j.advance(JobStatus::kRunning), std::logic_error);
}

class TrainedService : public ::testing::Test {
 protected:
  void SetUp() override {
    files_ = synth_files(dir_);
    s_ = std::make_unique<Running>(options(dir_, files_));
    const auto job = s_->await(s_->post("/train", {{"task", "outcome"}, {"variant", "continuous"}})["job_id"]);
    ASSERT_EQ(job["status"], "done") << job.dump();
    model_ = job["result"]["model_id"];
  }
  TempDir dir_;
  Files files_;
  std::unique_ptr<Running> s_;
  std::string model_;
};

TEST_F(TrainedService, CoefficientsSortedWithSupportAnnotations) {
  const auto c = s_->get("/models/" + model_ + "/coefficients");
  const auto& coefs = c["coefficients"];
  ASSERT_EQ(coefs.size(), 12u);
  for (std::size_t i = 1; i < coefs.size(); ++i) {
    EXPECT_GE(coefs[i - 1]["weight"].get<double>(), coefs[i]["weight"].get<double>());
    EXPECT_EQ(coefs[i]["rank"], i + 1);
  }
  for (const auto& e : coefs) EXPECT_TRUE(e["expected_support"].is_string());
  EXPECT_FALSE(c["stale"].get<bool>());
  EXPECT_FALSE(c["train_fingerprint"].get<std::string>().empty());
}

TEST_F(TrainedService, ExplanationSumsToLogit) {
  const auto e = s_->post("/models/" + model_ + "/explain", {{"doc_id", "syn-00250"}});
  double z = e["intercept"];
  for (const auto& c : e["scores"]) z += c["score"].get<double>();
  EXPECT_NEAR(z, e["logit"].get<double>(), 1e-12);
  EXPECT_NEAR(e["predicted_probability"].get<double>(), sigmoid(z), 1e-12);
  int status = 0;
  s_->post("/models/" + model_ + "/explain", {{"doc_id", "nope"}}, &status);
  EXPECT_EQ(status, 404);
}

TEST_F(TrainedService, PruneCreatesNewModelAndLeavesOtherRows) {
  int status = 0;
  const auto same = s_->post("/models/" + model_ + "/prune", {{"drop", json::array()}, {"retrain", false}}, &status);
  EXPECT_EQ(same["model_id"], model_);
  const auto pruned = s_->post("/models/" + model_ + "/prune", {{"drop", {"sepsis"}}, {"retrain", false}}, &status);
  EXPECT_EQ(status, 201);
  const std::string pid = pruned["model_id"];
  EXPECT_NE(pid, model_);
  const auto before = s_->post("/models/" + model_ + "/explain", {{"doc_id", "syn-00003"}});
  const auto after = s_->post("/models/" + pid + "/explain", {{"doc_id", "syn-00003"}});
  std::map<std::string, double> b, a;
  for (const auto& c : before["scores"]) b[c["query_id"]] = c["score"];
  for (const auto& c : after["scores"]) a[c["query_id"]] = c["score"];
  for (const auto& [id, v] : b) {
    if (id == "sepsis") {
      EXPECT_EQ(a[id], 0.0);
    } else {
      EXPECT_EQ(a[id], v) << id;
    }
  }
  const auto retrained = s_->post("/models/" + model_ + "/prune", {{"drop", {"sepsis"}}, {"retrain", true}}, &status);
  EXPECT_EQ(status, 201);
  const auto rc = s_->get("/models/" + retrained["model_id"].get<std::string>() + "/coefficients");
  EXPECT_EQ(rc["coefficients"].size(), 11u);
  s_->post("/models/" + model_ + "/prune", {{"drop", {"ghost"}}}, &status);
  EXPECT_EQ(status, 422);
}

TEST_F(TrainedService, QueryEditMarksModelStaleButKeepsIt) {
  auto r = s_->http().Delete("/queries/anemia");
  ASSERT_EQ(r->status, 200);
  const auto c = s_->get("/models/" + model_ + "/coefficients");
  EXPECT_TRUE(c["stale"].get<bool>());
  EXPECT_EQ(c["coefficients"].size(), 12u);
}

TEST_F(TrainedService, GetsArePureViews) {
  for (const auto* path : {"/queries", "/models", "/jobs"}) {
    EXPECT_EQ(s_->http().Get(path)->body, s_->http().Get(path)->body) << path;
  }
  const std::string p = "/models/" + model_ + "/coefficients";
  EXPECT_EQ(s_->http().Get(p)->body, s_->http().Get(p)->body);
}

TEST_F(TrainedService, StateSurvivesRestart) {
  const auto coefs = s_->get("/models/" + model_ + "/coefficients");
  const auto queries = s_->get("/queries");
  s_.reset();
  Running again(options(dir_, files_));
  EXPECT_EQ(again.get("/models/" + model_ + "/coefficients"), coefs);
  EXPECT_EQ(again.get("/queries"), queries);
  // Same request after restart maps to the same model and job.
  int status = 0;
  const auto job = again.post("/train", {{"task", "outcome"}, {"variant", "continuous"}}, &status);
  EXPECT_EQ(status, 200);
  EXPECT_EQ(job["model_id"], model_);
}

TEST_F(TrainedService, ExperimentJobsProduceReports) {
  for (const auto* kind : {"grid", "curve", "ablation"}) {
    const auto job = s_->await(s_->post(std::string("/experiments/") + kind, json::object())["job_id"]);
    ASSERT_EQ(job["status"], "done") << kind << " " << job.dump();
    EXPECT_FALSE(job["result"]["report"].empty()) << kind;
  }
  int status = 0;
  s_->post("/experiments/bogus", json::object(), &status);
  EXPECT_EQ(status, 404);
}

TEST(Service, RefusesCorruptStateNamingFile) {
  TempDir dir;
  const auto f = tiny_files(dir);
  auto o = options(dir, f);
  std::filesystem::create_directories(o.state_dir / "models");
  write_file((o.state_dir / "models" / "broken.json").string(), "{\"model_id\": ");
  try {
    Service svc(o);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("broken.json"), std::string::npos) << e.what();
  }
  write_file((o.state_dir / "models" / "broken.json").string(), "{}");
  write_file((o.state_dir / "queries.json").string(), "[1,2");
  try {
    Service svc(o);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("queries.json"), std::string::npos) << e.what();
  }
}

TEST(Service, BearerTokenGuardsEverythingButHealth) {
  TempDir dir;
  auto o = options(dir, tiny_files(dir));
  o.bearer_token = "s3cret";
  Running s(o);
  EXPECT_EQ(s.http().Get("/health")->status, 200);
  EXPECT_EQ(s.http().Get("/queries")->status, 401);
  s.http().set_bearer_token_auth("s3cret");
  EXPECT_EQ(s.http().Get("/queries")->status, 200);
}

TEST(Service, PortBusyIsReported) {
  TempDir dir;
  const auto f = tiny_files(dir);
  Service a(options(dir, f));
  const int port = a.start();
  TempDir other;
  Service b(options(other, tiny_files(other)));
  EXPECT_THROW(b.start("127.0.0.1", port), UsageError);
}

}  // namespace
}  // namespace nlfeat
