/*
 * Copyright 2026 The tscltr Authors.
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

#include "tscltr/pipeline.hpp"

#include <cmath>
#include <map>
#include <vector>

#include <gtest/gtest.h>

namespace tscltr {
namespace {

TEST(ExaminationModelTest, InverseRankWithCutoff) {
  const ExaminationModel exam;
  EXPECT_EQ(exam.prob(1), 1.0);
  EXPECT_EQ(exam.prob(4), 0.25);
  EXPECT_EQ(exam.prob(10), 0.1);
  EXPECT_EQ(exam.prob(11), 0.0);
  EXPECT_EQ(exam.prob(0), 0.0);
  EXPECT_NEAR(exam.slot_mass(3), 1.0 + 0.5 + 1.0 / 3.0, 1e-15);
  EXPECT_EQ(exam.slot_mass(20), exam.slot_mass(10));
}

TEST(CheckListSizesTest, RejectsInconsistentSizes) {
  EXPECT_NO_THROW(check_list_sizes(5, 5, 5));
  EXPECT_THROW(check_list_sizes(4, 5, 10), ArgumentError);
  EXPECT_THROW(check_list_sizes(11, 5, 10), ArgumentError);
  EXPECT_THROW(check_list_sizes(4, 0, 10), ArgumentError);
}

TEST(ForEachTwoStageTest, ProbabilitiesSumToOne) {
  const PLPolicy c = policy_from_scores(std::vector<double>{0.2, -0.4, 1.1, 0.0, 0.5});
  const PLPolicy r = policy_from_scores(std::vector<double>{-1.0, 0.3, 0.8, 0.1, -0.2});
  double total = 0.0;
  std::size_t visits = 0;
  for_each_two_stage(c, r, 0, 3, 2, [&](const TwoStageOutcome& o) {
    total += o.probability;
    ++visits;
    for (auto d : o.displayed)
      EXPECT_NE(std::find(o.candidates.begin(), o.candidates.end(), d), o.candidates.end());
  });
  EXPECT_NEAR(total, 1.0, 1e-12);
  EXPECT_EQ(visits, 5u * 4 * 3 * 3 * 2);
}

TEST(ForEachTwoStageTest, RerankerSeesOnlyTheCandidateSet) {
  // Displayed-list law: P(y_r) = sum over y_c of P(y_c) P(y_r | set(y_c)).
  const std::vector<double> cs{0.2, -0.4, 1.1, 0.0};
  const std::vector<double> rs{-1.0, 0.3, 0.8, 0.1};
  std::map<std::vector<std::uint32_t>, double> law;
  for_each_two_stage(policy_from_scores(cs), policy_from_scores(rs), 0, 2, 1,
                     [&](const TwoStageOutcome& o) { law[o.displayed] += o.probability; });
  // Independent computation: sum over unordered candidate pairs.
  for (std::uint32_t d = 0; d < 4; ++d) {
    double p = 0.0;
    for (std::uint32_t a = 0; a < 4; ++a)
      for (std::uint32_t b = 0; b < 4; ++b) {
        if (a == b || (a != d && b != d)) continue;
        const double za = std::exp(cs[0]) + std::exp(cs[1]) + std::exp(cs[2]) + std::exp(cs[3]);
        const double pc = std::exp(cs[a]) / za * std::exp(cs[b]) / (za - std::exp(cs[a]));
        p += pc * std::exp(rs[d]) / (std::exp(rs[a]) + std::exp(rs[b]));
      }
    EXPECT_NEAR(law[{d}], p, 1e-14);
  }
}

TEST(ForEachTwoStageTest, GuardsLargeCatalogs) {
  const PLPolicy p = policy_from_scores(std::vector<double>(9, 0.0));
  EXPECT_THROW(for_each_two_stage(p, p, 0, 2, 1, [](const TwoStageOutcome&) {}), GuardError);
}

TEST(TwoStageSamplerTest, DisplaysDistinctCandidates) {
  std::vector<double> s(50);
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = std::sin(static_cast<double>(i));
  const PLPolicy c = policy_from_scores(s);
  const PLPolicy r = policy_from_scores(std::vector<double>(50, 0.0));
  TwoStageSampler sampler(c, r, 0, 20, 10);
  TwoStageDraw draw;
  Rng rng(1);
  for (int t = 0; t < 100; ++t) {
    sampler.draw(rng, draw);
    ASSERT_EQ(draw.candidates.size(), 20u);
    ASSERT_EQ(draw.display.size(), 10u);
    std::vector<ItemId> shown;
    for (std::size_t j = 0; j < 10; ++j) shown.push_back(draw.displayed_item(j));
    EXPECT_NO_THROW(Ranking{shown});
  }
}

TEST(TwoStageSamplerTest, RejectsMismatchedCatalogs) {
  const PLPolicy a = policy_from_scores(std::vector<double>(5, 0.0));
  const PLPolicy b = policy_from_scores(std::vector<double>(6, 0.0));
  EXPECT_THROW(TwoStageSampler(a, b, 0, 3, 2), ArgumentError);
  EXPECT_THROW(TwoStageSampler(a, a, 0, 6, 2), ArgumentError);
}

}  // namespace
}  // namespace tscltr
