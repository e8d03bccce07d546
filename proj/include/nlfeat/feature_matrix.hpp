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

#ifndef NLFEAT_FEATURE_MATRIX_HPP_
#define NLFEAT_FEATURE_MATRIX_HPP_

#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "nlfeat/error.hpp"

namespace nlfeat {

using json = nlohmann::json;

// Documents x queries grid, row-major. NaN marks a cell that has not been
// computed yet (only ever seen in partially written caches).
struct FeatureMatrix {
  std::vector<std::string> doc_ids;
  std::vector<std::string> query_ids;
  std::vector<double> values;
  json provenance = json::object();

  FeatureMatrix() = default;
  FeatureMatrix(std::vector<std::string> docs, std::vector<std::string> queries, double fill = 0.0)
      : doc_ids(std::move(docs)),
        query_ids(std::move(queries)),
        values(doc_ids.size() * query_ids.size(), fill) {}

  std::size_t rows() const { return doc_ids.size(); }
  std::size_t cols() const { return query_ids.size(); }

  double at(std::size_t r, std::size_t c) const { return values[r * cols() + c]; }
  double& at(std::size_t r, std::size_t c) { return values[r * cols() + c]; }

  std::optional<std::size_t> row_of(const std::string& doc_id) const {
    for (std::size_t i = 0; i < doc_ids.size(); ++i) {
      if (doc_ids[i] == doc_id) return i;
    }
    return std::nullopt;
  }

  std::optional<std::size_t> col_of(const std::string& query_id) const {
    for (std::size_t i = 0; i < query_ids.size(); ++i) {
      if (query_ids[i] == query_id) return i;
    }
    return std::nullopt;
  }

  std::vector<double> column(std::size_t c) const {
    std::vector<double> out(rows());
    for (std::size_t r = 0; r < rows(); ++r) out[r] = at(r, c);
    return out;
  }

  bool complete() const {
    for (double v : values) {
      if (std::isnan(v)) return false;
    }
    return true;
  }

  // Subset of columns, in the order given.
  FeatureMatrix select_columns(const std::vector<std::string>& ids) const {
    std::vector<std::size_t> src;
    for (const auto& id : ids) {
      auto c = col_of(id);
      if (!c) throw DataError("feature matrix has no column '" + id + "'");
      src.push_back(*c);
    }
    FeatureMatrix out(doc_ids, ids);
    out.provenance = provenance;
    for (std::size_t r = 0; r < rows(); ++r) {
      for (std::size_t j = 0; j < src.size(); ++j) out.at(r, j) = at(r, src[j]);
    }
    return out;
  }

  bool operator==(const FeatureMatrix& o) const {
    if (doc_ids != o.doc_ids || query_ids != o.query_ids || values.size() != o.values.size()) return false;
    for (std::size_t i = 0; i < values.size(); ++i) {
      const bool both_nan = std::isnan(values[i]) && std::isnan(o.values[i]);
      if (!both_nan && values[i] != o.values[i]) return false;
    }
    return true;
  }
};

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

namespace detail {

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

inline std::vector<std::string> split_csv_line(const std::string& line, std::size_t line_no) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (quoted) throw DataError("feature file line " + std::to_string(line_no) + ": unterminated quote");
  out.push_back(std::move(cur));
  return out;
}

inline void write_atomically(const std::filesystem::path& path, const std::string& contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  // Unique per writer so concurrent saves of one path never share a temp file.
  static std::atomic<std::uint64_t> counter{0};
  auto tmp = path;
  tmp += ".tmp." + std::to_string(std::hash<std::thread::id>{}(std::this_thread::get_id())) + "." +
         std::to_string(counter++);
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write '" + tmp.string() + "'");
    out << contents;
    if (!out) throw DataError("write failed for '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace detail

inline std::filesystem::path provenance_path(const std::filesystem::path& csv) {
  auto p = csv;
  p += ".provenance.json";
  return p;
}

inline std::string feature_csv(const FeatureMatrix& m) {
  std::string out = "doc_id";
  for (const auto& q : m.query_ids) out += "," + detail::csv_field(q);
  out += '\n';
  for (std::size_t r = 0; r < m.rows(); ++r) {
    out += detail::csv_field(m.doc_ids[r]);
    for (std::size_t c = 0; c < m.cols(); ++c) {
      out += ',';
      const double v = m.at(r, c);
      if (!std::isnan(v)) out += format_double(v);
    }
    out += '\n';
  }
  return out;
}

// Writes the CSV and, next to it, the provenance sidecar.
inline void save_feature_matrix(const FeatureMatrix& m, const std::filesystem::path& path) {
  detail::write_atomically(path, feature_csv(m));
  detail::write_atomically(provenance_path(path), m.provenance.dump(2) + "\n");
}

inline FeatureMatrix load_feature_matrix(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line)) throw DataError(path.string() + ": empty feature file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  auto header = detail::split_csv_line(line, 1);
  if (header.empty() || header[0] != "doc_id") {
    throw DataError(path.string() + ": header must start with \"doc_id\"");
  }
  FeatureMatrix m;
  m.query_ids.assign(header.begin() + 1, header.end());
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = detail::split_csv_line(line, line_no);
    if (fields.size() != header.size()) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                      std::to_string(header.size()) + " fields, got " + std::to_string(fields.size()));
    }
    m.doc_ids.push_back(fields[0]);
    for (std::size_t c = 1; c < fields.size(); ++c) {
      if (fields[c].empty()) {
        m.values.push_back(std::numeric_limits<double>::quiet_NaN());
        continue;
      }
      char* end = nullptr;
      const double v = std::strtod(fields[c].c_str(), &end);
      if (end == fields[c].c_str() || *end != '\0' || !std::isfinite(v) || v < 0.0 || v > 1.0) {
        throw DataError(path.string() + ":" + std::to_string(line_no) + ": invalid feature value '" +
                        fields[c] + "'");
      }
      m.values.push_back(v);
    }
  }
  const auto side = provenance_path(path);
  if (std::filesystem::exists(side)) {
    std::ifstream pin(side, std::ios::binary);
    try {
      m.provenance = json::parse(pin);
    } catch (const json::parse_error& e) {
      throw DataError(side.string() + ": malformed provenance: " + e.what());
    }
  }
  return m;
}

}  // namespace nlfeat

#endif  // NLFEAT_FEATURE_MATRIX_HPP_
