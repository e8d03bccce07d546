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

#ifndef NLFEAT_CONFIG_HPP_
#define NLFEAT_CONFIG_HPP_

#include <istream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "nlfeat/error.hpp"

namespace nlfeat {

// Flat key -> value view of a TOML-style experiment file. Section headers
// are accepted but do not namespace keys; arrays come back comma-joined.
using KeyValues = std::map<std::string, std::string>;

inline std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(value);
  while (std::getline(in, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    if (b == std::string::npos) continue;
    const auto e = item.find_last_not_of(" \t");
    out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

inline KeyValues parse_key_values(std::istream& in, const std::string& source = "<config>") {
  std::vector<CLI::ConfigItem> items;
  try {
    items = CLI::ConfigTOML().from_config(in);
  } catch (const CLI::Error& e) {
    throw UsageError(source + ": " + e.what());
  }
  KeyValues out;
  for (const auto& item : items) {
    // "++" and "--" mark section boundaries.
    if (item.name == "++" || item.name == "--") continue;
    std::string value;
    for (const auto& v : item.inputs) {
      if (!value.empty()) value += ',';
      value += v;
    }
    if (!out.emplace(item.name, value).second) {
      throw UsageError(source + ": duplicate key '" + item.name + "'");
    }
  }
  return out;
}

inline KeyValues parse_key_values(const std::string& text, const std::string& source = "<config>") {
  std::istringstream in(text);
  return parse_key_values(in, source);
}

}  // namespace nlfeat

#endif  // NLFEAT_CONFIG_HPP_
