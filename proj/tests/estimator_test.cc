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

#include "tscltr/estimator.hpp"

#include <cmath>
#include <vector>

#include <gtest/gtest.h>

namespace tscltr {
namespace {

TEST(DcgTest, HandComputedValues) {
  const RelevanceMatrix rel(1, 6, {{0, 1}, {0, 3}});
  // Relevant at ranks 1 and 3: 1/log2(2) + 1/log2(4).
  EXPECT_NEAR(dcg_at_10(rel, 0, std::vector<ItemId>{1, 0, 3}), 1.5, 1e-15);
  EXPECT_NEAR(ideal_dcg_at_10(2), 1.0 + 1.0 / std::log2(3.0), 1e-15);
  EXPECT_EQ(dcg_at_10(rel, 0, std::vector<ItemId>{0, 2}), 0.0);
  EXPECT_EQ(ideal_dcg_at_10(0), 0.0);
  EXPECT_NEAR(ideal_dcg_at_10(50), ideal_dcg_at_10(10), 1e-15);
}

TEST(NdcgTest, DeterministicPolicyHitsKnownValue) {
  // Scores so peaked that the pipeline is effectively deterministic.
  const PLPolicy p = policy_from_scores(std::vector<double>{300.0, 200.0, 100.0, 0.0, -100.0});
  const RelevanceMatrix rel(1, 5, {{0, 1}, {0, 4}});
  const double expected = (1.0 / std::log2(3.0)) / (1.0 + 1.0 / std::log2(3.0));
  const std::vector<UserId> users{0};
  EXPECT_NEAR(ndcg_at_10(p, p, rel, users, 4, 2, 0, 0, Backend::kExact).value, expected, 1e-12);
  EXPECT_NEAR(ndcg_at_10(p, p, rel, users, 4, 2, 20, 1, Backend::kMonteCarlo).value, expected, 1e-12);
}

TEST(NdcgTest, SkipsUsersWithoutRelevantItems) {
  const PLPolicy p = policy_from_score_table({{0.0, 1.0, 2.0}, {0.0, 0.0, 0.0}});
  const RelevanceMatrix rel(2, 3, {{0, 2}});
  const NdcgResult r = ndcg_at_10(p, p, rel, std::vector<UserId>{0, 1}, 3, 2, 0, 0, Backend::kExact);
  EXPECT_EQ(r.skipped_users, 1u);
  EXPECT_EQ(r.per_user.size(), 1u);
}

TEST(NdcgTest, MonteCarloAgreesWithExact) {
  const PLPolicy c = policy_from_scores(std::vector<double>{0.4, -0.2, 0.9, 0.0, 0.3, -0.8});
  const PLPolicy r = policy_from_scores(std::vector<double>{0.1, 0.5, -0.4, 0.8, 0.0, 0.2});
  const RelevanceMatrix rel(1, 6, {{0, 0}, {0, 3}, {0, 5}});
  const std::vector<UserId> users{0};
  const double exact = ndcg_at_10(c, r, rel, users, 4, 3, 0, 0, Backend::kExact).value;
  const double mc = ndcg_at_10(c, r, rel, users, 4, 3, 40000, 5, Backend::kMonteCarlo).value;
  // NDCG of one draw lies in [0, 1], so the MC standard error is below 0.5 / 200.
  EXPECT_NEAR(mc, exact, 4 * 0.5 / 200.0);
}

TEST(DocWeightsTest, MonteCarloWithinStandardErrors) {
  const PLPolicy c = policy_from_scores(std::vector<double>{0.4, -0.2, 0.9, 0.0, 0.3});
  const PLPolicy r = policy_from_scores(std::vector<double>{0.1, 0.5, -0.4, 0.8, 0.0});
  const ExaminationModel exam;
  const DocWeightEstimate exact = doc_weights_exact(c, r, 0, 3, 2, exam);
  Rng rng(8);
  const DocWeightEstimate mc = doc_weights_mc(c, r, 0, 3, 2, 50000, exam, rng);
  for (std::size_t d = 0; d < 5; ++d) EXPECT_NEAR(mc.weights[d], exact.weights[d], 4.0 * mc.std_err[d]);
  EXPECT_NEAR(exact.total(), 1.5, 1e-12);
  EXPECT_NEAR(mc.total(), 1.5, 1e-12);
}

TEST(IpsUtilityTest, HandComputedLog) {
  ClickLog log;
  log.records.push_back({0, Ranking({2, 1}), {1, 0}});
  log.records.push_back({0, Ranking({1, 2}), {1, 1}});
  log.records.push_back({0, Ranking({0, 1}), {0, 0}});
  PropensityTable rho0(0.01);
  rho0.set(0, 1, 0.5);
  rho0.set(0, 2, 0.25);
  DocWeightEstimate w;
  w.weights = {0.3, 0.2, 0.1};
  int calls = 0;
  const UtilityEstimate u = ips_utility(log, [&](UserId) { ++calls; return w; }, rho0);
  // (0.1/0.25 + 0.2/0.5 + 0.1/0.25 + 0) / 3
  EXPECT_NEAR(u.value, 1.2 / 3.0, 1e-15);
  EXPECT_EQ(calls, 1);
  ASSERT_EQ(u.contributions.size(), 3u);
  EXPECT_EQ(u.contributions[2], 0.0);
}

TEST(IpsUtilityTest, MissingPropensityIsIntegrityError) {
  ClickLog log;
  log.records.push_back({0, Ranking({2}), {1}});
  DocWeightEstimate w;
  w.weights = {0.0, 0.0, 1.0};
  EXPECT_THROW(ips_utility(log, [&](UserId) { return w; }, PropensityTable(0.1)), IntegrityError);
  EXPECT_THROW(ips_utility(ClickLog{}, [&](UserId) { return w; }, PropensityTable(0.1)), ArgumentError);
}

TEST(TrueUtilityTest, ExactAndMonteCarloAgree) {
  const PLPolicy c = policy_from_score_table({{0.4, -0.2, 0.9, 0.0}, {0.0, 0.3, 0.1, -0.5}});
  const PLPolicy r = policy_from_score_table({{0.1, 0.5, -0.4, 0.8}, {0.2, 0.2, 0.6, 0.0}});
  const RelevanceMatrix rel(2, 4, {{0, 1}, {0, 2}, {1, 3}});
  const std::vector<UserId> users{0, 1};
  const ExaminationModel exam;
  const double exact = true_utility(c, r, rel, users, 3, 2, exam, 0, 0, Backend::kExact).value;
  const double mc = true_utility(c, r, rel, users, 3, 2, exam, 40000, 3, Backend::kMonteCarlo).value;
  // Per-draw utility is at most 1.5, so the standard error is below 1.5 / 200.
  EXPECT_NEAR(mc, exact, 4 * 1.5 / 200.0);
  EXPECT_EQ(true_utility(c, r, rel, users, 3, 2, exam, 1000, 3, Backend::kMonteCarlo, 3).value,
            true_utility(c, r, rel, users, 3, 2, exam, 1000, 3, Backend::kMonteCarlo, 1).value);
}

}  // namespace
}  // namespace tscltr
