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

#ifndef NLFEAT_PROMPT_TEMPLATE_HPP_
#define NLFEAT_PROMPT_TEMPLATE_HPP_

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace nlfeat {

// A prompt is preamble + delimiter + source text + delimiter + question.
struct PromptTemplate {
  std::string template_id;
  std::string preamble;
  std::string delimiter;
};

inline constexpr std::string_view kDashDelimiter = "\n--------------\n";

inline const std::vector<PromptTemplate>& builtin_templates() {
  static const std::vector<PromptTemplate> kTemplates = {
      {"mimic", "Read the following text from a clinical note:", std::string(kDashDelimiter)},
      {"cxr", "Read the following Chest X-ray report:", std::string(kDashDelimiter)},
  };
  return kTemplates;
}

inline std::optional<PromptTemplate> find_template(std::string_view template_id) {
  for (const auto& t : builtin_templates()) {
    if (t.template_id == template_id) return t;
  }
  return std::nullopt;
}

}  // namespace nlfeat

#endif  // NLFEAT_PROMPT_TEMPLATE_HPP_
