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

#ifndef NLFEAT_CORE_HPP_
#define NLFEAT_CORE_HPP_

#include <algorithm>
#include <cstddef>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "nlfeat/error.hpp"
#include "nlfeat/hash.hpp"
#include "nlfeat/prompt_template.hpp"

namespace nlfeat {

using json = nlohmann::json;

enum class Split { kTrain, kTest };

inline std::string_view to_string(Split s) { return s == Split::kTrain ? "train" : "test"; }

struct Document {
  std::string doc_id;
  std::string text;
  // task/label name -> 0|1. Absent means unlabeled for that task.
  std::map<std::string, int> labels;
  Split split = Split::kTrain;
  // query_id -> 0|1 reference indicator (e.g. an ICD code or an expert
  // annotation). Empty when the document carries none.
  std::map<std::string, int> reference_features;

  std::optional<int> label(const std::string& task) const {
    auto it = labels.find(task);
    if (it == labels.end()) return std::nullopt;
    return it->second;
  }

  bool operator==(const Document&) const = default;
};

enum class TaskType { kSingleLabel, kMultiLabelGroup };

// A multi-label group "phenotype" owns label columns "phenotype/<class>";
// each column is trained and evaluated as an independent binary task.
struct Task {
  std::string name;
  TaskType type = TaskType::kSingleLabel;
  std::vector<std::string> labels;

  bool operator==(const Task&) const = default;
};

inline constexpr char kGroupSeparator = '/';

class Dataset {
 public:
  Dataset() = default;

  // Validates invariants and derives the task list from the label keys.
  explicit Dataset(std::vector<Document> documents) : documents_(std::move(documents)) {
    std::set<std::string> label_names;
    for (std::size_t i = 0; i < documents_.size(); ++i) {
      const auto& d = documents_[i];
      if (d.doc_id.empty()) throw DataError("document " + std::to_string(i) + ": doc_id is empty");
      if (d.text.empty()) throw DataError("document '" + d.doc_id + "': text is empty");
      if (!index_.emplace(d.doc_id, i).second) {
        throw DataError("duplicate doc_id '" + d.doc_id + "'");
      }
      for (const auto& [task, value] : d.labels) {
        if (value != 0 && value != 1) {
          throw DataError("document '" + d.doc_id + "': label must be 0 or 1 (task '" + task + "')");
        }
        label_names.insert(task);
      }
      for (const auto& [q, value] : d.reference_features) {
        if (value != 0 && value != 1) {
          throw DataError("document '" + d.doc_id + "': reference feature must be 0 or 1 (query '" + q + "')");
        }
      }
    }
    std::map<std::string, Task> groups;
    for (const auto& name : label_names) {
      const auto sep = name.find(kGroupSeparator);
      if (sep == std::string::npos) {
        tasks_.push_back({name, TaskType::kSingleLabel, {name}});
      } else {
        auto& g = groups[name.substr(0, sep)];
        g.name = name.substr(0, sep);
        g.type = TaskType::kMultiLabelGroup;
        g.labels.push_back(name);
      }
    }
    for (auto& [_, g] : groups) tasks_.push_back(std::move(g));
    std::sort(tasks_.begin(), tasks_.end(),
              [](const Task& a, const Task& b) { return a.name < b.name; });
  }

  const std::vector<Document>& documents() const { return documents_; }
  const std::vector<Task>& tasks() const { return tasks_; }
  std::size_t size() const { return documents_.size(); }
  bool empty() const { return documents_.empty(); }
  const Document& operator[](std::size_t i) const { return documents_[i]; }

  // Every binary label column, in task order.
  std::vector<std::string> label_names() const {
    std::vector<std::string> out;
    for (const auto& t : tasks_) out.insert(out.end(), t.labels.begin(), t.labels.end());
    return out;
  }

  bool has_label(const std::string& name) const {
    for (const auto& t : tasks_) {
      if (t.name == name) return true;
      if (std::find(t.labels.begin(), t.labels.end(), name) != t.labels.end()) return true;
    }
    return false;
  }

  const Task* find_task(const std::string& name) const {
    for (const auto& t : tasks_) {
      if (t.name == name) return &t;
    }
    return nullptr;
  }

  const Document* find(const std::string& doc_id) const {
    auto it = index_.find(doc_id);
    return it == index_.end() ? nullptr : &documents_[it->second];
  }

  std::optional<std::size_t> index_of(const std::string& doc_id) const {
    auto it = index_.find(doc_id);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  // Indices of documents in `split`, in file order.
  std::vector<std::size_t> indices(Split split) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < documents_.size(); ++i) {
      if (documents_[i].split == split) out.push_back(i);
    }
    return out;
  }

  bool has_reference_features() const {
    return std::any_of(documents_.begin(), documents_.end(),
                       [](const Document& d) { return !d.reference_features.empty(); });
  }

  std::string content_hash() const {
    ContentHasher h;
    for (const auto& d : documents_) {
      h.add(d.doc_id).add(d.text).add(to_string(d.split));
    }
    return h.hex();
  }

  bool operator==(const Dataset& other) const {
    return documents_ == other.documents_ && tasks_ == other.tasks_;
  }

 private:
  std::vector<Document> documents_;
  std::vector<Task> tasks_;
  std::unordered_map<std::string, std::size_t> index_;
};

namespace detail {

inline std::map<std::string, int> parse_binary_map(const json& obj, const char* what,
                                                   const std::string& where) {
  std::map<std::string, int> out;
  if (!obj.is_object()) throw DataError(where + ": \"" + what + "\" must be an object");
  for (const auto& [k, v] : obj.items()) {
    if (!v.is_number_integer() || (v.get<long long>() != 0 && v.get<long long>() != 1)) {
      throw DataError(where + ": " + (std::string(what) == "labels" ? "label" : "reference feature") +
                      " must be 0 or 1 ('" + k + "')");
    }
    out.emplace(k, v.get<int>());
  }
  return out;
}

inline std::ifstream open_input(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  return in;
}

}  // namespace detail

// Parses line-delimited dataset records. `source` names the input in errors.
inline Dataset parse_dataset(std::istream& in, const std::string& source = "<input>") {
  std::vector<Document> docs;
  std::unordered_map<std::string, std::size_t> first_line;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    const std::string where = source + ":" + std::to_string(line_no);
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::parse_error& e) {
      throw DataError(where + ": malformed JSON: " + e.what());
    }
    if (!rec.is_object()) throw DataError(where + ": record must be a JSON object");
    Document d;
    if (!rec.contains("doc_id") || !rec["doc_id"].is_string()) {
      throw DataError(where + ": missing string field \"doc_id\"");
    }
    if (!rec.contains("text") || !rec["text"].is_string()) {
      throw DataError(where + ": missing string field \"text\"");
    }
    d.doc_id = rec["doc_id"].get<std::string>();
    d.text = rec["text"].get<std::string>();
    if (d.doc_id.empty()) throw DataError(where + ": doc_id is empty");
    if (d.text.empty()) throw DataError(where + ": text is empty");
    if (rec.contains("labels")) d.labels = detail::parse_binary_map(rec["labels"], "labels", where);
    const std::string split = rec.value("split", std::string("train"));
    if (split == "train") {
      d.split = Split::kTrain;
    } else if (split == "test") {
      d.split = Split::kTest;
    } else {
      throw DataError(where + ": unknown split value '" + split + "'");
    }
    if (rec.contains("reference_features") && !rec["reference_features"].is_null()) {
      d.reference_features =
          detail::parse_binary_map(rec["reference_features"], "reference_features", where);
    }
    auto [it, inserted] = first_line.emplace(d.doc_id, line_no);
    if (!inserted) {
      throw DataError(source + ": duplicate doc_id '" + d.doc_id + "' on lines " +
                      std::to_string(it->second) + " and " + std::to_string(line_no));
    }
    docs.push_back(std::move(d));
  }
  return Dataset(std::move(docs));
}

inline Dataset load_dataset(const std::string& path) {
  auto in = detail::open_input(path);
  return parse_dataset(in, path);
}

inline json document_to_json(const Document& d) {
  json rec = {{"doc_id", d.doc_id},
              {"text", d.text},
              {"labels", d.labels},
              {"split", to_string(d.split)}};
  if (!d.reference_features.empty()) rec["reference_features"] = d.reference_features;
  return rec;
}

inline std::string serialize_dataset(const Dataset& ds) {
  std::string out;
  for (const auto& d : ds.documents()) {
    out += document_to_json(d).dump();
    out += '\n';
  }
  return out;
}

enum class Support { kSupports, kNotRelevant };

struct FeatureQuery {
  std::string query_id;
  std::string question;
  std::string template_id = "mimic";
  bool custom = false;
  std::map<std::string, Support> expected_support;
  // Target label for downstream (zero-shot) queries; empty for features.
  std::string task;

  bool operator==(const FeatureQuery&) const = default;
};

class QuerySet {
 public:
  QuerySet() = default;
  QuerySet(std::string name, std::vector<FeatureQuery> queries, bool downstream = false)
      : name_(std::move(name)), queries_(std::move(queries)), downstream_(downstream) {
    for (std::size_t i = 0; i < queries_.size(); ++i) {
      const auto& q = queries_[i];
      if (q.query_id.empty()) throw DataError("query " + std::to_string(i) + ": query_id is empty");
      if (q.question.empty()) throw DataError("query '" + q.query_id + "': question is empty");
      if (!find_template(q.template_id)) {
        throw DataError("query '" + q.query_id + "': unknown template_id '" + q.template_id + "'");
      }
      if (!index_.emplace(q.query_id, i).second) {
        throw DataError("duplicate query_id '" + q.query_id + "'");
      }
    }
  }

  const std::string& name() const { return name_; }
  const std::vector<FeatureQuery>& queries() const { return queries_; }
  bool downstream() const { return downstream_; }
  std::size_t size() const { return queries_.size(); }
  bool empty() const { return queries_.empty(); }
  const FeatureQuery& operator[](std::size_t i) const { return queries_[i]; }

  // Column index of a query: its position in the file, nothing else.
  std::optional<std::size_t> index_of(const std::string& query_id) const {
    auto it = index_.find(query_id);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  const FeatureQuery* find(const std::string& query_id) const {
    auto i = index_of(query_id);
    return i ? &queries_[*i] : nullptr;
  }

  std::vector<std::string> ids() const {
    std::vector<std::string> out;
    out.reserve(queries_.size());
    for (const auto& q : queries_) out.push_back(q.query_id);
    return out;
  }

  // Subset preserving file order.
  template <class Pred>
  QuerySet filtered(Pred keep, std::string name = {}) const {
    std::vector<FeatureQuery> kept;
    for (const auto& q : queries_) {
      if (keep(q)) kept.push_back(q);
    }
    return QuerySet(name.empty() ? name_ : std::move(name), std::move(kept), downstream_);
  }

  bool operator==(const QuerySet& other) const {
    return name_ == other.name_ && queries_ == other.queries_ && downstream_ == other.downstream_;
  }

 private:
  std::string name_;
  std::vector<FeatureQuery> queries_;
  bool downstream_ = false;
  std::unordered_map<std::string, std::size_t> index_;
};

inline FeatureQuery query_from_json(const json& e, std::size_t i) {
  const std::string where = "query " + std::to_string(i);
  if (!e.is_object()) throw DataError(where + ": entry must be an object");
  FeatureQuery q;
  if (!e.contains("query_id") || !e["query_id"].is_string()) {
    throw DataError(where + ": missing string field \"query_id\"");
  }
  q.query_id = e["query_id"].get<std::string>();
  if (!e.contains("question") || !e["question"].is_string()) {
    throw DataError("query '" + q.query_id + "': missing string field \"question\"");
  }
  q.question = e["question"].get<std::string>();
  if (e.contains("template_id")) {
    if (!e["template_id"].is_string()) throw DataError("query '" + q.query_id + "': template_id must be a string");
    q.template_id = e["template_id"].get<std::string>();
  }
  if (e.contains("custom")) {
    if (!e["custom"].is_boolean()) throw DataError("query '" + q.query_id + "': custom must be a boolean");
    q.custom = e["custom"].get<bool>();
  }
  if (e.contains("task")) q.task = e["task"].get<std::string>();
  if (e.contains("expected_support") && !e["expected_support"].is_null()) {
    const auto& es = e["expected_support"];
    if (!es.is_object()) throw DataError("query '" + q.query_id + "': expected_support must be an object");
    for (const auto& [task, v] : es.items()) {
      const std::string s = v.is_string() ? v.get<std::string>() : "";
      if (s == "supports") {
        q.expected_support.emplace(task, Support::kSupports);
      } else if (s == "not-relevant") {
        q.expected_support.emplace(task, Support::kNotRelevant);
      } else {
        throw DataError("query '" + q.query_id + "': expected_support values must be \"supports\" or \"not-relevant\"");
      }
    }
  }
  return q;
}

inline json query_to_json(const FeatureQuery& q) {
  json e = {{"query_id", q.query_id},
            {"question", q.question},
            {"template_id", q.template_id},
            {"custom", q.custom}};
  if (!q.expected_support.empty()) {
    json es = json::object();
    for (const auto& [task, s] : q.expected_support) {
      es[task] = s == Support::kSupports ? "supports" : "not-relevant";
    }
    e["expected_support"] = es;
  }
  if (!q.task.empty()) e["task"] = q.task;
  return e;
}

inline QuerySet queries_from_json(const json& doc) {
  if (!doc.is_object()) throw DataError("query set must be a JSON object");
  if (!doc.contains("queries") || !doc["queries"].is_array()) {
    throw DataError("query set: missing array field \"queries\"");
  }
  std::vector<FeatureQuery> queries;
  std::size_t i = 0;
  for (const auto& e : doc["queries"]) queries.push_back(query_from_json(e, i++));
  const bool downstream = doc.value("downstream", false);
  if (downstream) {
    for (auto& q : queries) {
      if (q.task.empty()) q.task = q.query_id;
    }
  }
  return QuerySet(doc.value("name", std::string()), std::move(queries), downstream);
}

inline json queries_to_json(const QuerySet& qs) {
  json arr = json::array();
  for (const auto& q : qs.queries()) arr.push_back(query_to_json(q));
  json doc = {{"name", qs.name()}, {"queries", arr}};
  if (qs.downstream()) doc["downstream"] = true;
  return doc;
}

inline QuerySet load_queries(const std::string& path) {
  auto in = detail::open_input(path);
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw DataError(path + ": malformed JSON: " + e.what());
  }
  return queries_from_json(doc);
}

// Cross-checks a query set against the dataset it is used with.
inline void validate_pair(const Dataset& ds, const QuerySet& qs) {
  for (const auto& q : qs.queries()) {
    for (const auto& [task, _] : q.expected_support) {
      if (!ds.has_label(task)) {
        throw DataError("query '" + q.query_id + "': expected_support names unknown task '" + task + "'");
      }
    }
  }
  for (const auto& d : ds.documents()) {
    for (const auto& [qid, _] : d.reference_features) {
      if (!qs.index_of(qid)) {
        throw DataError("document '" + d.doc_id + "': reference feature for unknown query '" + qid + "'");
      }
    }
  }
}

}  // namespace nlfeat

#endif  // NLFEAT_CORE_HPP_
