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

#ifndef NLFEAT_CLI_HPP_
#define NLFEAT_CLI_HPP_

#include <csignal>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <pthread.h>

#include "CLI11.hpp"
#include "json.hpp"
#include "nlfeat/experiments.hpp"
#include "nlfeat/service.hpp"
#include "nlfeat/synth.hpp"

namespace nlfeat {

namespace detail {

struct ScorerFlags {
  std::string scorer;
  double noise_sigma = 0.0;
  std::uint64_t noise_seed = 0;
  std::optional<std::size_t> max_tokens;
  std::optional<std::size_t> max_chunks;
  std::optional<std::string> token_unit;

  void add_to(CLI::App* cmd, bool required) {
    auto* o = cmd->add_option("--scorer", scorer, "mock:<lexicon.json> or http:<url>");
    if (required) o->required();
    cmd->add_option("--mock-noise-sigma", noise_sigma, "Gaussian noise on the mock scorer's logprob_yes");
    cmd->add_option("--mock-noise-seed", noise_seed, "Seed for the mock scorer's noise");
    cmd->add_option("--max-tokens-per-chunk", max_tokens);
    cmd->add_option("--max-chunks", max_chunks);
    cmd->add_option("--token-unit", token_unit)->check(CLI::IsMember({"backend-tokens", "whitespace-words"}));
  }

  ChunkingConfig chunking(ChunkingConfig c = {}) const {
    if (max_tokens) c.max_tokens_per_chunk = *max_tokens;
    if (max_chunks) c.max_chunks = *max_chunks;
    if (token_unit) c.token_unit = *token_unit == "backend-tokens" ? TokenUnit::kBackendTokens : TokenUnit::kWhitespaceWords;
    c.validate();
    return c;
  }

  MockNoise noise() const { return {noise_sigma, noise_seed}; }
};

struct ExperimentFlags {
  std::string config;
  std::string dataset, queries, downstream, out_dir;
  std::optional<std::size_t> bootstrap;
  std::optional<std::size_t> workers;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--config", config, "key = value experiment file");
    cmd->add_option("--dataset", dataset);
    cmd->add_option("--queries", queries);
    cmd->add_option("--downstream", downstream, "downstream query set for the zero-shot baseline");
    cmd->add_option("--out-dir", out_dir);
    cmd->add_option("--bootstrap", bootstrap, "bootstrap resamples");
    cmd->add_option("--workers", workers);
  }
};

inline void write_or_print(const json& j, const std::string& path, std::ostream& out) {
  if (path.empty()) {
    out << j.dump(2) << "\n";
  } else {
    write_atomically(path, j.dump(2) + "\n");
  }
}

inline std::string_view kind_name(ErrorKind k) {
  switch (k) {
    case ErrorKind::kUsage: return "usage";
    case ErrorKind::kData: return "data";
    case ErrorKind::kBackend: return "backend";
  }
  return "data";
}

inline int report_error(std::ostream& err, bool as_json, ErrorKind kind, const std::string& message,
                        const std::string& usage = {}) {
  if (as_json) {
    err << json({{"error", message}, {"kind", kind_name(kind)}, {"exit_code", static_cast<int>(kind)}}).dump()
        << "\n";
  } else {
    err << "error: " << message << "\n";
    if (!usage.empty()) err << usage;
  }
  return static_cast<int>(kind);
}

// Blocks SIGINT/SIGTERM in this thread (and threads it creates later) and
// waits for one of them.
class SignalWaiter {
 public:
  SignalWaiter() {
    sigemptyset(&set_);
    sigaddset(&set_, SIGINT);
    sigaddset(&set_, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &set_, &old_);
  }
  ~SignalWaiter() { pthread_sigmask(SIG_SETMASK, &old_, nullptr); }
  int wait() {
    int sig = 0;
    sigwait(&set_, &sig);
    return sig;
  }

 private:
  sigset_t set_{};
  sigset_t old_{};
};

}  // namespace detail

// Entry point shared by the nlfeat binary and the tests. Exit codes: 0 ok,
// 1 usage, 2 data, 3 scorer/backend.
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  bool json_errors = false;
  for (int i = 1; i < argc; ++i) {
    if (std::string_view(argv[i]) == "--json-errors") json_errors = true;
  }

  CLI::App app{"nlfeat: interpretable features from yes/no questions", "nlfeat"};
  app.require_subcommand(1);
  app.fallthrough();
  app.add_flag("--json-errors", json_errors, "print errors as JSON on stderr");
  std::optional<std::uint64_t> seed;
  app.add_option("--seed", seed, "seed for every random choice");

  // extract
  auto* extract = app.add_subcommand("extract", "score every (document, query) cell into a feature cache");
  std::string ex_dataset, ex_queries, ex_out;
  std::optional<std::size_t> ex_workers;
  detail::ScorerFlags ex_scorer;
  extract->add_option("--dataset", ex_dataset)->required();
  extract->add_option("--queries", ex_queries)->required();
  extract->add_option("--out", ex_out, "feature CSV; reused as a cache when it exists")->required();
  extract->add_option("--workers", ex_workers);
  ex_scorer.add_to(extract, true);

  // train
  auto* trainc = app.add_subcommand("train", "fit a logistic model on the train split");
  std::string tr_features, tr_dataset, tr_task, tr_variant = "continuous", tr_queries, tr_query_set = "with-custom",
                                                tr_out;
  TrainConfig tr_cfg;
  trainc->add_option("--features", tr_features)->required();
  trainc->add_option("--dataset", tr_dataset)->required();
  trainc->add_option("--task", tr_task, "binary label name")->required();
  trainc->add_option("--variant", tr_variant)->check(CLI::IsMember({"binary", "continuous"}));
  trainc->add_option("--queries", tr_queries, "needed for --query-set without-custom");
  trainc->add_option("--query-set", tr_query_set)->check(CLI::IsMember({"with-custom", "without-custom"}));
  trainc->add_option("--out", tr_out)->required();
  trainc->add_option("--l2", tr_cfg.l2_strength);
  trainc->add_option("--epochs", tr_cfg.epochs);
  trainc->add_option("--tolerance", tr_cfg.tolerance);

  // eval
  auto* evalc = app.add_subcommand("eval", "test-split AUROC with a bootstrap CI, entropy and ranking alignment");
  std::string ev_model, ev_features, ev_dataset, ev_queries, ev_out;
  std::size_t ev_bootstrap = 1000;
  evalc->add_option("--model", ev_model)->required();
  evalc->add_option("--features", ev_features)->required();
  evalc->add_option("--dataset", ev_dataset)->required();
  evalc->add_option("--queries", ev_queries, "adds ranking alignment from expected_support");
  evalc->add_option("--bootstrap", ev_bootstrap);
  evalc->add_option("--out", ev_out);

  // experiments
  detail::ExperimentFlags grid_flags, curve_flags, ablate_flags, fid_flags;
  detail::ScorerFlags grid_scorer, curve_scorer, ablate_scorer, fid_scorer;
  auto* grid = app.add_subcommand("grid", "downstream comparison grid");
  grid_flags.add_to(grid);
  grid_scorer.add_to(grid, false);
  auto* curve = app.add_subcommand("curve", "learning curves over train fractions");
  curve_flags.add_to(curve);
  curve_scorer.add_to(curve, false);
  auto* ablate = app.add_subcommand("ablate", "post-hoc feature pruning curves");
  ablate_flags.add_to(ablate);
  ablate_scorer.add_to(ablate, false);
  std::string ab_mode = "both";
  ablate->add_option("--mode", ab_mode)->check(CLI::IsMember({"random", "magnitude", "both"}));
  auto* fidelity = app.add_subcommand("fidelity", "extraction fidelity against reference features");
  fid_flags.add_to(fidelity);
  fid_scorer.add_to(fidelity, false);

  // serve
  auto* serve = app.add_subcommand("serve", "run the HTTP service");
  std::string sv_state, sv_dataset, sv_queries, sv_downstream, sv_host = "127.0.0.1";
  int sv_port = 8080;
  std::size_t sv_workers = 2;
  detail::ScorerFlags sv_scorer;
  serve->add_option("--state-dir", sv_state)->required();
  serve->add_option("--dataset", sv_dataset)->required();
  serve->add_option("--queries", sv_queries, "initial query set for a fresh state dir");
  serve->add_option("--downstream", sv_downstream);
  serve->add_option("--host", sv_host);
  serve->add_option("--port", sv_port);
  serve->add_option("--workers", sv_workers);
  sv_scorer.add_to(serve, true);

  // synth
  auto* synth = app.add_subcommand("synth", "write the synthetic corpus (dataset, queries, lexicon, truth)");
  std::string sy_out;
  SynthConfig sy_cfg;
  synth->add_option("--out-dir", sy_out)->required();
  synth->add_option("--n-train", sy_cfg.n_train);
  synth->add_option("--n-test", sy_cfg.n_test);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    return detail::report_error(err, json_errors, ErrorKind::kUsage, e.what(), json_errors ? "" : app.help());
  }

  auto experiment_config = [&](const detail::ExperimentFlags& f, const detail::ScorerFlags& s) {
    ExperimentConfig cfg;
    if (!f.config.empty()) cfg = load_experiment_config(f.config);
    if (!f.dataset.empty()) cfg.dataset = f.dataset;
    if (!f.queries.empty()) cfg.queries = f.queries;
    if (!f.downstream.empty()) cfg.downstream = f.downstream;
    if (!f.out_dir.empty()) cfg.output_dir = f.out_dir;
    if (f.bootstrap) cfg.bootstrap_resamples = *f.bootstrap;
    if (f.workers) cfg.workers = *f.workers;
    if (!s.scorer.empty()) cfg.scorer = s.scorer;
    if (s.noise_sigma > 0.0) cfg.noise = s.noise();
    cfg.chunking = s.chunking(cfg.chunking);
    if (seed) cfg.seed = *seed;
    // Manifests live next to the reports; a missing output dir is fine.
    cfg.validate();
    return cfg;
  };

  try {
    if (*extract) {
      const auto ds = load_dataset(ex_dataset);
      const auto qs = load_queries(ex_queries);
      validate_pair(ds, qs);
      const auto scorer = make_scorer(ex_scorer.scorer, ex_scorer.noise());
      ExtractOptions opts;
      opts.cache = ex_out;
      if (ex_workers) opts.workers = *ex_workers;
      const auto m = extract_matrix(ds, qs, *scorer, ex_scorer.chunking(), opts);
      out << json({{"features", ex_out}, {"rows", m.rows()}, {"cols", m.cols()},
                   {"provenance_hash", m.provenance["content_hash"]}})
                 .dump()
          << "\n";
    } else if (*trainc) {
      const auto ds = load_dataset(tr_dataset);
      FeatureMatrix f = load_feature_matrix(tr_features);
      if (!f.complete()) throw DataError(tr_features + ": feature matrix has uncomputed cells");
      if (tr_query_set == "without-custom") {
        if (tr_queries.empty()) throw UsageError("--query-set without-custom needs --queries");
        const auto qs = load_queries(tr_queries);
        std::vector<std::string> keep;
        for (const auto& id : f.query_ids) {
          const auto* q = qs.find(id);
          if (!q) throw DataError("feature column '" + id + "' is not in " + tr_queries);
          if (!q->custom) keep.push_back(id);
        }
        f = f.select_columns(keep);
      }
      if (tr_variant == "binary") f = binarize(f);
      if (seed) tr_cfg.seed = *seed;
      tr_cfg.validate();
      std::vector<std::size_t> rows;
      std::vector<int> labels;
      for (std::size_t r = 0; r < f.rows(); ++r) {
        const Document* d = ds.find(f.doc_ids[r]);
        if (!d) throw DataError("feature row '" + f.doc_ids[r] + "' is not in the dataset");
        if (d->split != Split::kTrain) continue;
        if (auto y = d->label(tr_task)) {
          rows.push_back(r);
          labels.push_back(*y);
        }
      }
      if (rows.empty()) throw DataError("no train documents carry label '" + tr_task + "'");
      auto model = train(detail::select_rows(f, rows), labels, tr_cfg, tr_task);
      save_model(model, tr_out);
      out << json({{"model", tr_out}, {"train_fingerprint", model.train_fingerprint}}).dump() << "\n";
    } else if (*evalc) {
      const auto ds = load_dataset(ev_dataset);
      const auto model = load_model(ev_model);
      FeatureMatrix f = load_feature_matrix(ev_features);
      f = f.select_columns(model.query_ids);
      std::vector<std::size_t> rows;
      std::vector<int> y;
      for (std::size_t r = 0; r < f.rows(); ++r) {
        const Document* d = ds.find(f.doc_ids[r]);
        if (!d || d->split != Split::kTest) continue;
        if (auto l = d->label(model.task)) {
          rows.push_back(r);
          y.push_back(*l);
        }
      }
      if (rows.empty()) throw DataError("no test documents carry label '" + model.task + "'");
      const auto scores = predict_proba(model, detail::select_rows(f, rows));
      ExperimentConfig cfg;
      cfg.bootstrap_resamples = ev_bootstrap;
      cfg.seed = seed.value_or(0);
      MetricReport rep;
      rep.metric = "auroc";
      rep.name = ev_model;
      rep.task = model.task;
      rep.n = rows.size();
      rep.point_estimate = try_auroc(scores, y);
      if (!rep.point_estimate) rep.note = "ill-defined: test split has a single class";
      attach_ci(rep, scores, y, cfg);
      json result = {{"auroc", report_to_json(rep)}, {"entropy", coefficient_entropy(model.weights)}};
      if (!ev_queries.empty()) {
        const auto qs = load_queries(ev_queries);
        if (detail::has_annotations(qs, model.task)) {
          std::vector<std::pair<std::string, double>> coefs;
          for (std::size_t j = 0; j < model.weights.size(); ++j) coefs.emplace_back(model.query_ids[j], model.weights[j]);
          const auto ra = ranking_alignment(coefs, detail::relevant_queries(qs, model.task));
          json pk = json::object();
          for (const auto& [k, p] : ra.precision_at) pk[std::to_string(k)] = p;
          result["ranking"] = {{"ranked_ids", ra.ranked_ids}, {"precision_at", pk}, {"auc", detail::opt_json(ra.auc)}};
        }
      }
      detail::write_or_print(result, ev_out, out);
    } else if (*grid) {
      const auto ws = open_workspace(experiment_config(grid_flags, grid_scorer));
      const auto g = run_grid(ws);
      out << json({{"grid", (std::filesystem::path(ws.cfg.output_dir) / "grid.json").string()},
                   {"failures", g.failures.size()}})
                 .dump()
          << "\n";
    } else if (*curve) {
      const auto ws = open_workspace(experiment_config(curve_flags, curve_scorer));
      const auto curves = run_curves(ws);
      out << json({{"curves", (std::filesystem::path(ws.cfg.output_dir) / "curves").string()},
                   {"variants", curves.size()}})
                 .dump()
          << "\n";
    } else if (*ablate) {
      const auto ws = open_workspace(experiment_config(ablate_flags, ablate_scorer));
      std::vector<AblationMode> modes;
      if (ab_mode != "magnitude") modes.push_back(AblationMode::kRandom);
      if (ab_mode != "random") modes.push_back(AblationMode::kMagnitude);
      json areas = json::object();
      for (const auto& a : run_ablation(ws, modes)) areas[std::string(to_string(a.mode))] = a.area;
      out << json({{"ablation", (std::filesystem::path(ws.cfg.output_dir) / "ablation").string()}, {"area", areas}})
                 .dump()
          << "\n";
    } else if (*fidelity) {
      const auto ws = open_workspace(experiment_config(fid_flags, fid_scorer));
      const auto r = run_fidelity(ws);
      out << json({{"fidelity", (std::filesystem::path(ws.cfg.output_dir) / "fidelity.json").string()},
                   {"mean_auroc", detail::opt_json(r.mean_auroc)},
                   {"mean_f1", r.mean_f1}})
                 .dump()
          << "\n";
    } else if (*serve) {
      detail::SignalWaiter signals;
      ServiceOptions o;
      o.state_dir = sv_state;
      o.dataset = sv_dataset;
      o.queries = sv_queries;
      o.downstream = sv_downstream;
      o.scorer = make_scorer(sv_scorer.scorer, sv_scorer.noise());
      o.chunking = sv_scorer.chunking();
      o.workers = sv_workers;
      if (const char* t = std::getenv("NLFEAT_SERVICE_TOKEN"); t && *t) o.bearer_token = t;
      if (seed) o.experiments.seed = *seed;
      Service svc(o);
      const int port = svc.start(sv_host, sv_port);
      out << json({{"listening", sv_host + ":" + std::to_string(port)}}).dump() << std::endl;
      signals.wait();
      svc.stop();
    } else if (*synth) {
      sy_cfg.seed = seed.value_or(sy_cfg.seed);
      const auto p = write_synthetic(generate_synthetic(sy_cfg), sy_out);
      out << json({{"dataset", p.dataset.string()},
                   {"queries", p.queries.string()},
                   {"downstream", p.downstream.string()},
                   {"lexicon", p.lexicon.string()},
                   {"truth", p.truth.string()}})
                 .dump()
          << "\n";
    }
  } catch (const Error& e) {
    return detail::report_error(err, json_errors, e.kind(), e.what());
  } catch (const std::filesystem::filesystem_error& e) {
    return detail::report_error(err, json_errors, ErrorKind::kData, e.what());
  } catch (const json::exception& e) {
    return detail::report_error(err, json_errors, ErrorKind::kData, e.what());
  }
  return 0;
}

}  // namespace nlfeat

#endif  // NLFEAT_CLI_HPP_
