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

#ifndef NLFEAT_EXPERIMENTS_HPP_
#define NLFEAT_EXPERIMENTS_HPP_

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "nlfeat/baselines.hpp"
#include "nlfeat/config.hpp"
#include "nlfeat/core.hpp"
#include "nlfeat/eval.hpp"
#include "nlfeat/extract.hpp"
#include "nlfeat/feature_matrix.hpp"
#include "nlfeat/http_scorer.hpp"
#include "nlfeat/linear.hpp"
#include "nlfeat/rng.hpp"
#include "nlfeat/scorer.hpp"

namespace nlfeat {

inline const std::vector<double>& default_fractions() {
  static const std::vector<double> kFractions = {0.01, 0.02, 0.05, 0.1, 0.25, 0.5, 1.0};
  return kFractions;
}

struct ExperimentConfig {
  std::string dataset;
  std::string queries;
  std::string downstream;  // optional; needed for the zero-shot baseline
  std::string scorer;      // "mock:<lexicon.json>" or "http:<url>"
  MockNoise noise;
  ChunkingConfig chunking;
  TrainConfig train;
  std::vector<std::string> variants = {"binary", "continuous"};
  std::vector<std::string> query_sets = {"with-custom", "without-custom"};
  std::vector<std::string> baselines = {"ground-truth", "tfidf", "zero-shot"};
  std::vector<std::size_t> tfidf_sizes = {30, 100, 1000, 30000};
  std::string output_dir = "out";
  // Drives training, subsampling, bootstrap and ablation orders.
  std::uint64_t seed = 0;
  std::size_t bootstrap_resamples = 1000;
  std::vector<double> fractions = default_fractions();
  std::vector<std::string> curve_systems = {"inferred-continuous-with-custom", "inferred-binary-with-custom",
                                            "ground-truth", "tfidf-1000"};
  std::string ablation_system = "inferred-continuous-with-custom";
  std::size_t ablation_repeats = 10;
  std::size_t workers = 0;

  TrainConfig effective_train() const {
    TrainConfig t = train;
    t.seed = seed;
    return t;
  }

  // Everything that determines results; output_dir is deliberately absent so
  // runs into different directories produce identical manifests.
  json to_json() const {
    return {{"dataset", dataset},
            {"queries", queries},
            {"downstream", downstream},
            {"scorer", scorer},
            {"mock_noise_sigma", noise.sigma},
            {"mock_noise_seed", noise.seed},
            {"chunking", chunking.to_json()},
            {"train", effective_train().to_json()},
            {"variants", variants},
            {"query_sets", query_sets},
            {"baselines", baselines},
            {"tfidf_sizes", tfidf_sizes},
            {"seed", seed},
            {"bootstrap_resamples", bootstrap_resamples},
            {"fractions", fractions},
            {"curve_systems", curve_systems},
            {"ablation_system", ablation_system},
            {"ablation_repeats", ablation_repeats}};
  }

  void validate(bool check_files = true) const {
    if (dataset.empty()) throw UsageError("config: dataset is required");
    if (queries.empty()) throw UsageError("config: queries is required");
    if (scorer.empty()) throw UsageError("config: scorer is required");
    if (variants.empty()) throw UsageError("config: variants must be nonempty");
    if (query_sets.empty()) throw UsageError("config: query_sets must be nonempty");
    for (const auto& v : variants) {
      if (v != "binary" && v != "continuous") throw UsageError("config: unknown variant '" + v + "'");
    }
    for (const auto& q : query_sets) {
      if (q != "with-custom" && q != "without-custom") throw UsageError("config: unknown query set '" + q + "'");
    }
    for (const auto& b : baselines) {
      if (b != "ground-truth" && b != "tfidf" && b != "zero-shot") {
        throw UsageError("config: unknown baseline '" + b + "'");
      }
    }
    for (double f : fractions) {
      if (!(f > 0.0 && f <= 1.0)) throw UsageError("config: fractions must lie in (0, 1]");
    }
    if (bootstrap_resamples == 0) throw UsageError("config: bootstrap_resamples must be positive");
    if (!(noise.sigma >= 0.0)) throw UsageError("config: mock_noise_sigma must be >= 0");
    chunking.validate();
    train.validate();
    if (check_files) {
      for (const auto* p : {&dataset, &queries, &downstream}) {
        if (!p->empty() && !std::filesystem::exists(*p)) throw DataError("config: file not found: " + *p);
      }
      if (scorer.rfind("mock:", 0) == 0 && !std::filesystem::exists(scorer.substr(5))) {
        throw DataError("config: lexicon not found: " + scorer.substr(5));
      }
    }
  }
};

namespace detail {

template <class T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const auto* end = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end) throw UsageError("config: '" + key + "' expects a number, got '" + v + "'");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw UsageError("config: '" + key + "' expects true or false, got '" + v + "'");
}

}  // namespace detail

// Applies key/value settings on top of `base`. Relative paths are resolved
// against `base_dir` when given.
inline ExperimentConfig apply_key_values(ExperimentConfig cfg, const KeyValues& kv,
                                         const std::filesystem::path& base_dir = {}) {
  auto path = [&](const std::string& v) {
    std::filesystem::path p(v);
    if (!base_dir.empty() && p.is_relative()) p = base_dir / p;
    return p.lexically_normal().string();
  };
  for (const auto& [key, v] : kv) {
    using detail::parse_number;
    if (key == "dataset") {
      cfg.dataset = path(v);
    } else if (key == "queries") {
      cfg.queries = path(v);
    } else if (key == "downstream") {
      cfg.downstream = v.empty() ? v : path(v);
    } else if (key == "scorer") {
      cfg.scorer = v.rfind("mock:", 0) == 0 ? "mock:" + path(v.substr(5)) : v;
    } else if (key == "mock_noise_sigma") {
      cfg.noise.sigma = parse_number<double>(key, v);
    } else if (key == "mock_noise_seed") {
      cfg.noise.seed = parse_number<std::uint64_t>(key, v);
    } else if (key == "max_tokens_per_chunk") {
      cfg.chunking.max_tokens_per_chunk = parse_number<std::size_t>(key, v);
    } else if (key == "max_chunks") {
      cfg.chunking.max_chunks = parse_number<std::size_t>(key, v);
    } else if (key == "token_unit") {
      cfg.chunking = ChunkingConfig::from_json({{"max_tokens_per_chunk", cfg.chunking.max_tokens_per_chunk},
                                                {"max_chunks", cfg.chunking.max_chunks},
                                                {"token_unit", v}});
    } else if (key == "l2_strength") {
      cfg.train.l2_strength = parse_number<double>(key, v);
    } else if (key == "epochs") {
      cfg.train.epochs = parse_number<int>(key, v);
    } else if (key == "tolerance") {
      cfg.train.tolerance = parse_number<double>(key, v);
    } else if (key == "n_iter_no_change") {
      cfg.train.n_iter_no_change = parse_number<int>(key, v);
    } else if (key == "fit_intercept") {
      cfg.train.fit_intercept = detail::parse_bool(key, v);
    } else if (key == "variants") {
      cfg.variants = split_list(v);
    } else if (key == "query_sets") {
      cfg.query_sets = split_list(v);
    } else if (key == "baselines") {
      cfg.baselines = split_list(v);
    } else if (key == "tfidf_sizes") {
      cfg.tfidf_sizes.clear();
      for (const auto& s : split_list(v)) cfg.tfidf_sizes.push_back(parse_number<std::size_t>(key, s));
    } else if (key == "output_dir") {
      cfg.output_dir = path(v);
    } else if (key == "seed") {
      cfg.seed = parse_number<std::uint64_t>(key, v);
    } else if (key == "bootstrap_resamples") {
      cfg.bootstrap_resamples = parse_number<std::size_t>(key, v);
    } else if (key == "fractions") {
      cfg.fractions.clear();
      for (const auto& s : split_list(v)) cfg.fractions.push_back(parse_number<double>(key, s));
    } else if (key == "curve_systems") {
      cfg.curve_systems = split_list(v);
    } else if (key == "ablation_system") {
      cfg.ablation_system = v;
    } else if (key == "ablation_repeats") {
      cfg.ablation_repeats = parse_number<std::size_t>(key, v);
    } else if (key == "workers") {
      cfg.workers = parse_number<std::size_t>(key, v);
    } else {
      throw UsageError("config: unknown key '" + key + "'");
    }
  }
  return cfg;
}

inline ExperimentConfig load_experiment_config(const std::filesystem::path& file, ExperimentConfig base = {}) {
  std::ifstream in(file);
  if (!in) throw UsageError("cannot open config '" + file.string() + "'");
  return apply_key_values(std::move(base), parse_key_values(in, file.string()), file.parent_path());
}

// "mock:<lexicon.json>" or "http:<url>"; SCORER_* environment variables
// override the HTTP settings.
inline std::shared_ptr<const Scorer> make_scorer(const std::string& spec, const MockNoise& noise = {}) {
  if (spec.rfind("mock:", 0) == 0) {
    return std::make_shared<MockScorer>(load_lexicon(spec.substr(5)), noise);
  }
  if (spec == "http" || spec.rfind("http:", 0) == 0 || spec.rfind("https:", 0) == 0) {
    HttpScorerOptions opts;
    if (spec.rfind("http://", 0) == 0 || spec.rfind("https://", 0) == 0) {
      opts.endpoint = spec;
    } else if (spec != "http") {
      opts.endpoint = spec.substr(5);
    }
    opts = http_options_from_env(opts);
    if (opts.endpoint.empty()) throw UsageError("scorer 'http' needs a URL or SCORER_ENDPOINT");
    return std::make_shared<HttpScorer>(opts);
  }
  throw UsageError("unknown scorer '" + spec + "' (expected mock:<lexicon.json> or http:<url>)");
}

// A parsed system name from the comparison grid.
struct SystemSpec {
  enum class Kind { kInferred, kGroundTruth, kTfidf, kZeroShot };
  Kind kind = Kind::kInferred;
  bool binary = false;
  bool with_custom = true;
  std::size_t vocab_size = 0;
  std::string name;
};

inline SystemSpec parse_system(const std::string& name) {
  SystemSpec s;
  s.name = name;
  if (name == "ground-truth") {
    s.kind = SystemSpec::Kind::kGroundTruth;
  } else if (name == "zero-shot") {
    s.kind = SystemSpec::Kind::kZeroShot;
  } else if (name.rfind("tfidf-", 0) == 0) {
    s.kind = SystemSpec::Kind::kTfidf;
    s.vocab_size = detail::parse_number<std::size_t>("system", name.substr(6));
    if (s.vocab_size == 0) throw UsageError("tfidf vocabulary size must be positive");
  } else if (name.rfind("inferred-", 0) == 0) {
    const std::string rest = name.substr(9);
    const auto dash = rest.find('-');
    const std::string variant = rest.substr(0, dash);
    const std::string qs = dash == std::string::npos ? "" : rest.substr(dash + 1);
    if ((variant != "binary" && variant != "continuous") || (qs != "with-custom" && qs != "without-custom")) {
      throw UsageError("unknown system '" + name + "'");
    }
    s.binary = variant == "binary";
    s.with_custom = qs == "with-custom";
  } else {
    throw UsageError("unknown system '" + name + "'");
  }
  return s;
}

inline std::string inferred_system_name(const std::string& variant, const std::string& query_set) {
  return "inferred-" + variant + "-" + query_set;
}

inline std::vector<std::string> grid_systems(const ExperimentConfig& cfg) {
  std::vector<std::string> out;
  for (const auto& v : cfg.variants) {
    for (const auto& q : cfg.query_sets) out.push_back(inferred_system_name(v, q));
  }
  for (const auto& b : cfg.baselines) {
    if (b == "tfidf") {
      for (auto n : cfg.tfidf_sizes) out.push_back("tfidf-" + std::to_string(n));
    } else {
      out.push_back(b);
    }
  }
  return out;
}

// Loaded inputs plus the continuous feature matrix over every document and
// query. Extraction happens once; every experiment reads from here.
struct Workspace {
  ExperimentConfig cfg;
  Dataset dataset;
  QuerySet queries;
  std::optional<QuerySet> downstream;
  std::shared_ptr<const Scorer> scorer;
  FeatureMatrix features;

  std::filesystem::path cache_dir() const { return std::filesystem::path(cfg.output_dir) / "cache"; }
};

inline Workspace make_workspace(ExperimentConfig cfg, Dataset ds, QuerySet qs, std::optional<QuerySet> downstream,
                                std::shared_ptr<const Scorer> scorer, const ExtractOptions& extract = {}) {
  validate_pair(ds, qs);
  Workspace ws{std::move(cfg), std::move(ds), std::move(qs), std::move(downstream), std::move(scorer), {}};
  ExtractOptions opts = extract;
  if (!opts.cache && !ws.cfg.output_dir.empty()) opts.cache = ws.cache_dir() / "features.csv";
  if (!opts.workers) opts.workers = ws.cfg.workers;
  if (opts.cache) std::filesystem::create_directories(opts.cache->parent_path());
  ws.features = extract_matrix(ws.dataset, ws.queries, *ws.scorer, ws.cfg.chunking, opts);
  return ws;
}

inline Workspace open_workspace(const ExperimentConfig& cfg, const ExtractOptions& extract = {}) {
  cfg.validate();
  auto ds = load_dataset(cfg.dataset);
  auto qs = load_queries(cfg.queries);
  std::optional<QuerySet> downstream;
  if (!cfg.downstream.empty()) downstream = load_queries(cfg.downstream);
  return make_workspace(cfg, std::move(ds), std::move(qs), std::move(downstream), make_scorer(cfg.scorer, cfg.noise),
                        extract);
}

namespace detail {

inline FeatureMatrix select_rows(const FeatureMatrix& m, const std::vector<std::size_t>& rows) {
  std::vector<std::string> ids;
  ids.reserve(rows.size());
  for (auto r : rows) ids.push_back(m.doc_ids[r]);
  FeatureMatrix out(std::move(ids), m.query_ids);
  out.provenance = m.provenance;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy_n(m.values.begin() + static_cast<std::ptrdiff_t>(rows[i] * m.cols()), m.cols(),
                out.values.begin() + static_cast<std::ptrdiff_t>(i * m.cols()));
  }
  return out;
}

inline std::vector<int> labels_of(const Dataset& ds, const std::vector<std::size_t>& rows, const std::string& label) {
  std::vector<int> y;
  y.reserve(rows.size());
  for (auto r : rows) y.push_back(*ds[r].label(label));
  return y;
}

inline std::uint64_t key_seed(std::uint64_t seed, std::string_view a, std::string_view b = {}) {
  return mix_seed(seed, ContentHasher().add(a).add(b).digest());
}

}  // namespace detail

// Documents of `split` that carry `label`, in file order.
inline std::vector<std::size_t> labeled_rows(const Dataset& ds, Split split, const std::string& label) {
  std::vector<std::size_t> out;
  for (auto i : ds.indices(split)) {
    if (ds[i].label(label)) out.push_back(i);
  }
  return out;
}

// Reference indicators as a feature matrix over every query that any
// document annotates; missing cells read as 0.
inline FeatureMatrix reference_matrix(const Dataset& ds, const QuerySet& qs) {
  std::vector<std::string> cols;
  for (const auto& q : qs.queries()) {
    for (const auto& d : ds.documents()) {
      if (d.reference_features.count(q.query_id)) {
        cols.push_back(q.query_id);
        break;
      }
    }
  }
  if (cols.empty()) throw DataError("dataset carries no reference features");
  std::vector<std::string> docs;
  for (const auto& d : ds.documents()) docs.push_back(d.doc_id);
  FeatureMatrix m(docs, cols);
  ContentHasher h;
  for (std::size_t r = 0; r < ds.size(); ++r) {
    for (std::size_t c = 0; c < cols.size(); ++c) {
      auto it = ds[r].reference_features.find(cols[c]);
      m.at(r, c) = it == ds[r].reference_features.end() ? 0.0 : it->second;
      h.add(static_cast<std::uint64_t>(m.at(r, c)));
    }
  }
  m.provenance = {{"kind", "reference"}, {"content_hash", h.hex()}};
  return m;
}

// Zero-shot scores for every test document and downstream task, cached next
// to the feature cache.
inline FeatureMatrix zero_shot_matrix(const Workspace& ws) {
  if (!ws.downstream) throw DataError("zero-shot baseline needs a downstream query set");
  std::vector<FeatureQuery> qs;
  for (const auto& dq : downstream_queries(*ws.downstream)) {
    FeatureQuery q;
    q.query_id = dq.task;
    q.question = dq.question;
    q.template_id = dq.template_id;
    qs.push_back(q);
  }
  std::vector<Document> test;
  for (auto i : ws.dataset.indices(Split::kTest)) test.push_back(ws.dataset[i]);
  if (test.empty()) throw DataError("zero-shot baseline: no test documents");
  ExtractOptions opts;
  opts.workers = ws.cfg.workers;
  if (!ws.cfg.output_dir.empty()) {
    std::filesystem::create_directories(ws.cache_dir());
    opts.cache = ws.cache_dir() / "zero_shot.csv";
  }
  return extract_matrix(Dataset(std::move(test)), QuerySet("downstream", std::move(qs)), *ws.scorer,
                        ws.cfg.chunking, opts);
}

struct SystemEval {
  MetricReport report;
  std::optional<LinearModel> model;
  std::vector<double> test_scores;
  std::vector<int> test_labels;
};

// Per-workspace memo of matrices that several systems share.
struct EvalCache {
  std::optional<FeatureMatrix> binary;
  std::optional<FeatureMatrix> reference;
  std::optional<FeatureMatrix> zero_shot;
};

inline std::vector<std::string> system_columns(const Workspace& ws, const SystemSpec& s) {
  std::vector<std::string> cols;
  for (const auto& q : ws.queries.queries()) {
    if (s.with_custom || !q.custom) cols.push_back(q.query_id);
  }
  if (cols.empty()) throw DataError("system '" + s.name + "' has no feature columns");
  return cols;
}

// Dense design for an inferred or ground-truth system over every document.
inline const FeatureMatrix& dense_source(const Workspace& ws, const SystemSpec& s, EvalCache& cache) {
  if (s.kind == SystemSpec::Kind::kGroundTruth) {
    if (!cache.reference) cache.reference = reference_matrix(ws.dataset, ws.queries);
    return *cache.reference;
  }
  if (s.binary) {
    if (!cache.binary) cache.binary = binarize(ws.features);
    return *cache.binary;
  }
  return ws.features;
}

inline void attach_ci(MetricReport& r, const std::vector<double>& scores, const std::vector<int>& y,
                      const ExperimentConfig& cfg) {
  if (!r.point_estimate) return;
  try {
    const auto ci = auroc_bootstrap(scores, y, cfg.bootstrap_resamples, detail::key_seed(cfg.seed, r.name, r.task));
    // Percentile intervals can miss the point estimate on skewed samples;
    // reports always bracket it.
    r.ci_low = std::min(ci.low, *r.point_estimate);
    r.ci_high = std::max(ci.high, *r.point_estimate);
  } catch (const IllDefinedError& e) {
    r.note = e.what();
  }
}

// Trains `system` for one binary label on `train_rows` (dataset indices) and
// scores the full test split.
inline SystemEval evaluate_system(const Workspace& ws, const SystemSpec& s, const std::string& label,
                                  const std::vector<std::size_t>& train_rows, EvalCache& cache) {
  const auto test_rows = labeled_rows(ws.dataset, Split::kTest, label);
  if (test_rows.empty()) throw DataError("label '" + label + "' has no test documents");
  SystemEval out;
  out.test_labels = detail::labels_of(ws.dataset, test_rows, label);
  const auto y_train = detail::labels_of(ws.dataset, train_rows, label);
  const auto tcfg = ws.cfg.effective_train();

  switch (s.kind) {
    case SystemSpec::Kind::kInferred:
    case SystemSpec::Kind::kGroundTruth: {
      const FeatureMatrix& src = dense_source(ws, s, cache);
      const auto cols = s.kind == SystemSpec::Kind::kInferred ? system_columns(ws, s) : src.query_ids;
      const FeatureMatrix x = src.select_columns(cols);
      out.model = train(detail::select_rows(x, train_rows), y_train, tcfg, label);
      out.test_scores = predict_proba(*out.model, detail::select_rows(x, test_rows));
      break;
    }
    case SystemSpec::Kind::kTfidf: {
      std::vector<const Document*> docs;
      for (auto r : train_rows) docs.push_back(&ws.dataset[r]);
      const auto vocab = fit_tfidf(std::span<const Document* const>(docs), s.vocab_size);
      std::vector<SparseRow> rows;
      for (const auto* d : docs) rows.push_back(tfidf_features(*d, vocab));
      out.model = train_tfidf_model(rows, y_train, vocab, tcfg, label);
      for (auto r : test_rows) out.test_scores.push_back(sparse_logit(*out.model, tfidf_features(ws.dataset[r], vocab)));
      break;
    }
    case SystemSpec::Kind::kZeroShot: {
      if (!cache.zero_shot) cache.zero_shot = zero_shot_matrix(ws);
      auto col = cache.zero_shot->col_of(label);
      if (!col) throw DataError("no downstream query for task '" + label + "'");
      for (auto r : test_rows) {
        out.test_scores.push_back(cache.zero_shot->at(*cache.zero_shot->row_of(ws.dataset[r].doc_id), *col));
      }
      break;
    }
  }
  out.report.metric = "auroc";
  out.report.name = s.name;
  out.report.task = label;
  out.report.n = test_rows.size();
  out.report.point_estimate = try_auroc(out.test_scores, out.test_labels);
  if (!out.report.point_estimate) out.report.note = "ill-defined: test split has a single class";
  attach_ci(out.report, out.test_scores, out.test_labels, ws.cfg);
  return out;
}

inline SystemEval evaluate_system(const Workspace& ws, const std::string& system, const std::string& label) {
  EvalCache cache;
  return evaluate_system(ws, parse_system(system), label, labeled_rows(ws.dataset, Split::kTrain, label), cache);
}

namespace detail {

inline json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

inline void write_json(const std::filesystem::path& path, const json& j) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  write_atomically(path, j.dump(2) + "\n");
}

// Records a written report in manifest.json, keeping entries from earlier runs
// into the same directory.
inline void update_manifest(const Workspace& ws, const std::string& kind, const std::vector<std::string>& files) {
  const auto dir = std::filesystem::path(ws.cfg.output_dir);
  const auto path = dir / "manifest.json";
  json m = json::object();
  if (std::filesystem::exists(path)) {
    try {
      std::ifstream in(path);
      m = json::parse(in);
    } catch (const json::exception&) {
      m = json::object();
    }
  }
  m["config"] = ws.cfg.to_json();
  m["seed"] = ws.cfg.seed;
  m["trainer_version"] = kTrainerVersion;
  m["scorer"] = ws.scorer->identity();
  m["dataset_hash"] = ws.dataset.content_hash();
  m["queries_hash"] = ContentHasher().add(queries_to_json(ws.queries).dump()).hex();
  m["feature_provenance_hash"] = ws.features.provenance.value("content_hash", std::string());
  json outputs = json::object();
  for (const auto& f : files) {
    std::ifstream in(dir / f, std::ios::binary);
    std::string body((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    outputs[f] = content_hash(body);
  }
  m["reports"][kind] = outputs;
  write_json(path, m);
}

inline std::set<std::string> relevant_queries(const QuerySet& qs, const std::string& label) {
  const auto sep = label.find(kGroupSeparator);
  const std::string group = sep == std::string::npos ? "" : label.substr(0, sep);
  std::set<std::string> out;
  for (const auto& q : qs.queries()) {
    auto it = q.expected_support.find(label);
    if (it == q.expected_support.end() && !group.empty()) it = q.expected_support.find(group);
    if (it != q.expected_support.end() && it->second == Support::kSupports) out.insert(q.query_id);
  }
  return out;
}

inline bool has_annotations(const QuerySet& qs, const std::string& label) {
  const auto sep = label.find(kGroupSeparator);
  for (const auto& q : qs.queries()) {
    if (q.expected_support.count(label)) return true;
    if (sep != std::string::npos && q.expected_support.count(label.substr(0, sep))) return true;
  }
  return false;
}

}  // namespace detail

// ---- extraction fidelity ----

struct FidelityRow {
  std::string query_id;
  std::size_t n = 0;
  std::size_t positives = 0;
  ClassificationMetrics binary;
  std::optional<double> auroc;
  std::string note;
};

struct FidelityReport {
  std::vector<FidelityRow> rows;
  std::optional<double> mean_auroc;
  double mean_f1 = 0.0;
};

// Continuous features scored by AUROC and binarized features by F1 against
// each document's reference indicators. Queries without positive references
// stay in the table with F1 0 but contribute no AUROC.
inline FidelityReport extraction_fidelity(const FeatureMatrix& features, const Dataset& ds) {
  if (!ds.has_reference_features()) throw DataError("fidelity: dataset carries no reference features");
  FidelityReport out;
  double auc_sum = 0.0;
  std::size_t auc_n = 0;
  double f1_sum = 0.0;
  std::size_t f1_n = 0;
  for (std::size_t c = 0; c < features.cols(); ++c) {
    FidelityRow row;
    row.query_id = features.query_ids[c];
    std::vector<double> scores;
    std::vector<int> preds, refs;
    for (std::size_t r = 0; r < features.rows(); ++r) {
      const Document* d = ds.find(features.doc_ids[r]);
      if (!d) throw DataError("fidelity: feature row '" + features.doc_ids[r] + "' is not in the dataset");
      auto it = d->reference_features.find(row.query_id);
      if (it == d->reference_features.end()) continue;
      scores.push_back(features.at(r, c));
      preds.push_back(binarize(features.at(r, c)));
      refs.push_back(it->second);
      row.positives += static_cast<std::size_t>(it->second);
    }
    row.n = refs.size();
    if (row.n == 0) {
      row.note = "no reference labels";
      out.rows.push_back(row);
      continue;
    }
    row.binary = classification_metrics(preds, refs);
    f1_sum += row.binary.f1;
    ++f1_n;
    if (row.positives == 0) {
      row.note = "no positive reference labels; omitted from AUROC";
    } else if (row.positives == row.n) {
      row.note = "no negative reference labels; omitted from AUROC";
    } else {
      row.auroc = auroc(scores, refs);
      auc_sum += *row.auroc;
      ++auc_n;
    }
    out.rows.push_back(row);
  }
  if (auc_n) out.mean_auroc = auc_sum / static_cast<double>(auc_n);
  if (f1_n) out.mean_f1 = f1_sum / static_cast<double>(f1_n);
  return out;
}

inline json fidelity_to_json(const FidelityReport& r) {
  json rows = json::array();
  for (const auto& row : r.rows) {
    json j = {{"query_id", row.query_id},
              {"n", row.n},
              {"positives", row.positives},
              {"f1", row.binary.f1},
              {"precision", row.binary.precision},
              {"recall", row.binary.recall},
              {"auroc", detail::opt_json(row.auroc)}};
    if (!row.note.empty()) j["note"] = row.note;
    rows.push_back(j);
  }
  return {{"queries", rows}, {"mean_auroc", detail::opt_json(r.mean_auroc)}, {"mean_f1", r.mean_f1}};
}

inline FidelityReport run_fidelity(const Workspace& ws) {
  const auto report = extraction_fidelity(ws.features, ws.dataset);
  detail::write_json(std::filesystem::path(ws.cfg.output_dir) / "fidelity.json", fidelity_to_json(report));
  detail::update_manifest(ws, "fidelity", {"fidelity.json"});
  return report;
}

// ---- downstream comparison grid ----

struct GridDelta {
  std::string task;
  std::string query_set;
  double binary = 0.0;
  double continuous = 0.0;
  double delta() const { return binary - continuous; }
};

struct GridResult {
  std::vector<MetricReport> reports;  // per label, then macro rows for groups
  std::vector<GridDelta> deltas;
  json ranking = json::array();
  json entropy = json::array();
  json failures = json::array();

  const MetricReport* find(const std::string& system, const std::string& task) const {
    for (const auto& r : reports) {
      if (r.name == system && r.task == task) return &r;
    }
    return nullptr;
  }
};

inline json grid_to_json(const GridResult& g) {
  json reports = json::array();
  for (const auto& r : g.reports) reports.push_back(report_to_json(r));
  json deltas = json::array();
  for (const auto& d : g.deltas) {
    deltas.push_back({{"task", d.task},
                      {"query_set", d.query_set},
                      {"binary", d.binary},
                      {"continuous", d.continuous},
                      {"delta", d.delta()}});
  }
  return {{"reports", reports},
          {"deltas", deltas},
          {"ranking", g.ranking},
          {"entropy", g.entropy},
          {"failures", g.failures}};
}

inline GridResult downstream_grid(const Workspace& ws) {
  GridResult g;
  EvalCache cache;
  const auto systems = grid_systems(ws.cfg);
  for (const auto& name : systems) {
    const auto spec = parse_system(name);
    for (const auto& task : ws.dataset.tasks()) {
      std::vector<MetricReport> per_label;
      for (const auto& label : task.labels) {
        MetricReport r;
        r.metric = "auroc";
        r.name = name;
        r.task = label;
        try {
          auto ev = evaluate_system(ws, spec, label, labeled_rows(ws.dataset, Split::kTrain, label), cache);
          r = ev.report;
          if (ev.model) {
            g.entropy.push_back({{"system", name},
                                 {"task", label},
                                 {"n_features", ev.model->weights.size()},
                                 {"entropy", coefficient_entropy(ev.model->weights)}});
          }
          if (ev.model && spec.kind == SystemSpec::Kind::kInferred && !spec.binary && spec.with_custom &&
              detail::has_annotations(ws.queries, label)) {
            std::vector<std::pair<std::string, double>> coefs;
            for (std::size_t j = 0; j < ev.model->weights.size(); ++j) {
              coefs.emplace_back(ev.model->query_ids[j], ev.model->weights[j]);
            }
            const auto ra = ranking_alignment(coefs, detail::relevant_queries(ws.queries, label));
            json pk = json::object();
            for (const auto& [k, p] : ra.precision_at) pk[std::to_string(k)] = p;
            g.ranking.push_back({{"system", name},
                                 {"task", label},
                                 {"ranked_ids", ra.ranked_ids},
                                 {"precision_at", pk},
                                 {"auc", detail::opt_json(ra.auc)}});
          }
        } catch (const Error& e) {
          r.note = e.what();
          g.failures.push_back({{"system", name}, {"task", label}, {"error", e.what()}});
        }
        g.reports.push_back(r);
        per_label.push_back(r);
      }
      if (task.type == TaskType::kMultiLabelGroup) {
        auto macro = macro_average(per_label);
        macro.task = task.name;
        macro.metric = "auroc-macro";
        g.reports.push_back(macro);
      }
    }
  }
  // Binary minus continuous, per task (macro for groups).
  for (const auto& qs : ws.cfg.query_sets) {
    for (const auto& task : ws.dataset.tasks()) {
      const auto* rb = g.find(inferred_system_name("binary", qs), task.name);
      const auto* rc = g.find(inferred_system_name("continuous", qs), task.name);
      if (rb && rc && rb->point_estimate && rc->point_estimate) {
        g.deltas.push_back({task.name, qs, *rb->point_estimate, *rc->point_estimate});
      }
    }
  }
  return g;
}

inline GridResult run_grid(const Workspace& ws) {
  auto g = downstream_grid(ws);
  std::vector<std::string> files = {"grid.json"};
  detail::write_json(std::filesystem::path(ws.cfg.output_dir) / "grid.json", grid_to_json(g));
  if (ws.dataset.has_reference_features()) {
    detail::write_json(std::filesystem::path(ws.cfg.output_dir) / "fidelity.json",
                       fidelity_to_json(extraction_fidelity(ws.features, ws.dataset)));
    files.push_back("fidelity.json");
  }
  detail::update_manifest(ws, "grid", files);
  return g;
}

// ---- learning curves ----

struct CurvePoint {
  double x = 0.0;
  std::optional<double> y;
  std::optional<double> ci_low;
  std::optional<double> ci_high;
  std::string variant;
  std::string task;
  std::size_t n_train = 0;
  std::string note;
};

inline json curve_point_to_json(const CurvePoint& p) {
  json j = {{"x", p.x},
            {"y", detail::opt_json(p.y)},
            {"ci_low", detail::opt_json(p.ci_low)},
            {"ci_high", detail::opt_json(p.ci_high)},
            {"variant", p.variant},
            {"task", p.task},
            {"n_train", p.n_train}};
  if (!p.note.empty()) j["note"] = p.note;
  return j;
}

// Seeded stratified subsample of `rows` (kept in their original order).
// Every class keeps round(fraction * count) rows, at least one. Fraction 1
// returns `rows` untouched.
inline std::vector<std::size_t> stratified_subsample(const Dataset& ds, const std::vector<std::size_t>& rows,
                                                     const std::string& label, double fraction,
                                                     std::uint64_t seed) {
  if (fraction >= 1.0) return rows;
  std::vector<std::size_t> by_class[2];
  for (auto r : rows) by_class[*ds[r].label(label)].push_back(r);
  Rng rng(seed);
  std::vector<std::size_t> kept;
  for (auto& cls : by_class) {
    if (cls.empty()) continue;
    const auto want = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::llround(fraction * static_cast<double>(cls.size()))), 1, cls.size());
    rng.shuffle(std::span<std::size_t>(cls));
    kept.insert(kept.end(), cls.begin(), cls.begin() + static_cast<std::ptrdiff_t>(want));
  }
  std::sort(kept.begin(), kept.end());
  return kept;
}

inline std::vector<double> normalized_fractions(std::vector<double> f) {
  std::sort(f.begin(), f.end());
  f.erase(std::unique(f.begin(), f.end()), f.end());
  return f;
}

// Points for one system over every label, x ascending within each label.
inline std::vector<CurvePoint> learning_curve(const Workspace& ws, const std::string& system) {
  const auto spec = parse_system(system);
  const auto fractions = normalized_fractions(ws.cfg.fractions);
  EvalCache cache;
  std::vector<CurvePoint> out;
  for (const auto& label : ws.dataset.label_names()) {
    const auto train_rows = labeled_rows(ws.dataset, Split::kTrain, label);
    for (std::size_t i = 0; i < fractions.size(); ++i) {
      CurvePoint p;
      p.x = fractions[i];
      p.variant = system;
      p.task = label;
      const auto rows = stratified_subsample(ws.dataset, train_rows, label, fractions[i],
                                             detail::key_seed(ws.cfg.seed, label, format_double(fractions[i])));
      p.n_train = rows.size();
      try {
        const auto ev = evaluate_system(ws, spec, label, rows, cache);
        p.y = ev.report.point_estimate;
        p.ci_low = ev.report.ci_low;
        p.ci_high = ev.report.ci_high;
        p.note = ev.report.note;
      } catch (const Error& e) {
        p.note = std::string("skipped: ") + e.what();
      }
      out.push_back(p);
    }
  }
  return out;
}

inline std::string file_safe(std::string s) {
  for (auto& c : s) {
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_' && c != '.') c = '_';
  }
  return s;
}

inline std::map<std::string, std::vector<CurvePoint>> run_curves(const Workspace& ws) {
  std::map<std::string, std::vector<CurvePoint>> all;
  std::vector<std::string> files;
  for (const auto& system : ws.cfg.curve_systems) {
    auto points = learning_curve(ws, system);
    json arr = json::array();
    for (const auto& p : points) arr.push_back(curve_point_to_json(p));
    const std::string file = "curves/" + file_safe(system) + ".json";
    detail::write_json(std::filesystem::path(ws.cfg.output_dir) / file,
                       {{"variant", system}, {"fractions", normalized_fractions(ws.cfg.fractions)}, {"points", arr}});
    files.push_back(file);
    all.emplace(system, std::move(points));
  }
  detail::update_manifest(ws, "curves", files);
  return all;
}

// ---- feature ablation ----

enum class AblationMode { kRandom, kMagnitude };

inline std::string_view to_string(AblationMode m) { return m == AblationMode::kRandom ? "random" : "magnitude"; }

struct AblationResult {
  AblationMode mode = AblationMode::kMagnitude;
  std::string system;
  std::vector<CurvePoint> points;  // x = features kept, y = AUROC averaged over labels
  double area = 0.0;
};

namespace detail {

struct TrainedLabel {
  std::string label;
  LinearModel model;
  FeatureMatrix test;
  std::vector<int> y;
};

// Mean test AUROC over labels with `kept` columns left in every model.
inline std::optional<double> ablated_auroc(const std::vector<TrainedLabel>& models, const std::set<std::string>& kept) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& t : models) {
    std::set<std::string> drop;
    for (const auto& id : t.model.query_ids) {
      if (!kept.count(id)) drop.insert(id);
    }
    const auto pruned = prune(t.model, drop, false);
    if (auto a = try_auroc(predict_proba(pruned, t.test), t.y)) {
      sum += *a;
      ++n;
    }
  }
  if (!n) return std::nullopt;
  return sum / static_cast<double>(n);
}

}  // namespace detail

// Post-hoc pruning curve: train once per label, then zero all but the first
// `x` features of an ordering and evaluate. Magnitude order keeps the largest
// mean |w| across labels; random order averages `ablation_repeats` seeded
// permutations.
inline AblationResult feature_ablation(const Workspace& ws, AblationMode mode) {
  const auto spec = parse_system(ws.cfg.ablation_system);
  if (spec.kind != SystemSpec::Kind::kInferred && spec.kind != SystemSpec::Kind::kGroundTruth) {
    throw UsageError("ablation needs a feature-based system, got '" + spec.name + "'");
  }
  EvalCache cache;
  const FeatureMatrix& src = dense_source(ws, spec, cache);
  const auto cols = spec.kind == SystemSpec::Kind::kInferred ? system_columns(ws, spec) : src.query_ids;
  const FeatureMatrix x = src.select_columns(cols);
  std::vector<detail::TrainedLabel> models;
  for (const auto& label : ws.dataset.label_names()) {
    const auto train_rows = labeled_rows(ws.dataset, Split::kTrain, label);
    const auto test_rows = labeled_rows(ws.dataset, Split::kTest, label);
    if (test_rows.empty()) continue;
    auto model = train(detail::select_rows(x, train_rows), detail::labels_of(ws.dataset, train_rows, label),
                       ws.cfg.effective_train(), label);
    models.push_back({label, std::move(model), detail::select_rows(x, test_rows),
                      detail::labels_of(ws.dataset, test_rows, label)});
  }
  if (models.empty()) throw DataError("ablation: no label has test documents");

  AblationResult out;
  out.mode = mode;
  out.system = spec.name;
  const std::size_t n = cols.size();
  std::vector<std::vector<std::string>> orders;
  if (mode == AblationMode::kMagnitude) {
    std::vector<std::pair<double, std::string>> mags;
    for (const auto& id : cols) {
      double sum = 0.0;
      for (const auto& t : models) sum += std::abs(t.model.weights[*t.model.index_of(id)]);
      mags.emplace_back(sum / static_cast<double>(models.size()), id);
    }
    std::sort(mags.begin(), mags.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;
    });
    std::vector<std::string> order;
    for (const auto& [_, id] : mags) order.push_back(id);
    orders.push_back(std::move(order));
  } else {
    if (ws.cfg.ablation_repeats == 0) throw UsageError("ablation_repeats must be positive");
    for (std::size_t r = 0; r < ws.cfg.ablation_repeats; ++r) {
      auto order = cols;
      Rng rng(mix_seed(mix_seed(ws.cfg.seed, 0xab1a7e), r));
      rng.shuffle(std::span<std::string>(order));
      orders.push_back(std::move(order));
    }
  }
  std::vector<double> xs, ys;
  for (std::size_t kept = 0; kept <= n; ++kept) {
    double sum = 0.0;
    std::size_t valid = 0;
    for (const auto& order : orders) {
      const std::set<std::string> keep(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(kept));
      if (auto a = detail::ablated_auroc(models, keep)) {
        sum += *a;
        ++valid;
      }
    }
    CurvePoint p;
    p.x = static_cast<double>(kept);
    p.variant = std::string(to_string(mode));
    p.task = "mean";
    if (valid) p.y = sum / static_cast<double>(valid);
    out.points.push_back(p);
    if (p.y) {
      xs.push_back(p.x);
      ys.push_back(*p.y);
    }
  }
  out.area = trapezoid_area(xs, ys);
  return out;
}

inline json ablation_to_json(const AblationResult& a) {
  json pts = json::array();
  for (const auto& p : a.points) pts.push_back(curve_point_to_json(p));
  return {{"mode", to_string(a.mode)}, {"system", a.system}, {"area", a.area}, {"points", pts}};
}

inline std::vector<AblationResult> run_ablation(const Workspace& ws,
                                                const std::vector<AblationMode>& modes = {AblationMode::kRandom,
                                                                                          AblationMode::kMagnitude}) {
  std::vector<AblationResult> out;
  std::vector<std::string> files;
  for (auto mode : modes) {
    out.push_back(feature_ablation(ws, mode));
    const std::string file = "ablation/" + std::string(to_string(mode)) + ".json";
    detail::write_json(std::filesystem::path(ws.cfg.output_dir) / file, ablation_to_json(out.back()));
    files.push_back(file);
  }
  detail::update_manifest(ws, "ablation", files);
  return out;
}

}  // namespace nlfeat

#endif  // NLFEAT_EXPERIMENTS_HPP_
