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

#include "nlfeat/scorer.hpp"

#include "gtest/gtest.h"
#include "nlfeat/extract.hpp"

namespace nlfeat {
namespace {

// High-precision reference values (40-digit evaluation, rounded to double).
constexpr double kSigmoidMinus1 = 0.2689414213699951207488;
constexpr double kSigmoid2 = 0.8807970779778824440597;

MockLexicon lexicon(double alpha = 1.0, double beta = -1.0) {
  MockLexicon lex;
  lex.entries["q"] = {{"cough"}, alpha, beta};
  return lex;
}

ScoreRequest request_for(const std::string& text) {
  FeatureQuery q{"q", "Does the patient have a cough?", "mimic"};
  ScoreRequest r;
  r.prompt = render_prompt(text, q);
  r.query_id = "q";
  return r;
}

TEST(MockScore, KeywordCountDrivesLogprob) {
  const auto lex = lexicon();
  EXPECT_EQ(calibrated_yes(mock_score(request_for("Cough today"), lex, "q")), 0.5);
  EXPECT_DOUBLE_EQ(calibrated_yes(mock_score(request_for("stable"), lex, "q")), kSigmoidMinus1);
  EXPECT_DOUBLE_EQ(calibrated_yes(mock_score(request_for("cough COUGH, coughing"), lex, "q")), kSigmoid2);
  const auto r = mock_score(request_for("stable"), lex, "q");
  EXPECT_EQ(r.logprob_yes, -1.0);
  EXPECT_EQ(r.logprob_no, 0.0);
}

TEST(MockScore, CountsOnlyEmbeddedSourceText) {
  // The question mentions "cough" but only the source text counts.
  const auto r = mock_score(request_for("no symptoms"), lexicon(), "q");
  EXPECT_EQ(r.logprob_yes, -1.0);
}

TEST(MockScore, UnknownQueryIdIsContractError) {
  try {
    mock_score(request_for("x"), lexicon(), "missing");
    FAIL();
  } catch (const ScorerError& e) {
    EXPECT_EQ(e.reason(), ScorerError::Reason::kContract);
  }
}

TEST(MockScore, RejectsNonYesNoCandidates) {
  auto r = request_for("x");
  r.candidates = {"yes", "maybe"};
  EXPECT_THROW(MockScorer(lexicon()).score(r), ScorerError);
}

TEST(MockScore, DeterministicIncludingNoise) {
  const MockScorer a(lexicon(), {1.0, 7});
  const MockScorer b(lexicon(), {1.0, 7});
  const auto req = request_for("cough here");
  EXPECT_EQ(a.score(req), b.score(req));
  EXPECT_EQ(a.score(req), a.score(req));
  EXPECT_NE(a.score(req).logprob_yes, MockScorer(lexicon()).score(req).logprob_yes);
  EXPECT_NE(a.identity(), MockScorer(lexicon()).identity());
}

TEST(MockScore, StrictlyMonotoneInKeywordCount) {
  const auto lex = lexicon(0.3, -2.0);
  std::string text = "start";
  double prev = mock_score(request_for(text), lex, "q").logprob_yes;
  for (int i = 0; i < 20; ++i) {
    text += " cough";
    const double cur = mock_score(request_for(text), lex, "q").logprob_yes;
    EXPECT_GT(cur, prev);
    prev = cur;
  }
}

TEST(Lexicon, ParsesAndValidates) {
  const auto lex = lexicon_from_json(json::parse(R"({"q":{"keywords":["Cough"],"alpha":2,"beta":-1}})"));
  EXPECT_EQ(lex.at("q").keywords, std::vector<std::string>{"cough"});
  EXPECT_EQ(lex.at("q").alpha, 2.0);
  EXPECT_THROW(lexicon_from_json(json::parse(R"({"q":{"keywords":[]}})")), DataError);
}

TEST(EmbeddedSourceText, UsesOutermostDelimiters) {
  FeatureQuery q{"q", "Q?", "cxr"};
  const std::string inner = "a\n--------------\nb";
  EXPECT_EQ(embedded_source_text(render_prompt(inner, q)), inner);
}

}  // namespace
}  // namespace nlfeat
