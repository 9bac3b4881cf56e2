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

#ifndef TSCLTR_ESTIMATOR_HPP_
#define TSCLTR_ESTIMATOR_HPP_

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <unordered_map>
#include <vector>

#include "tscltr/clicksim.hpp"
#include "tscltr/common.hpp"
#include "tscltr/dataset.hpp"
#include "tscltr/pipeline.hpp"
#include "tscltr/policy.hpp"

namespace tscltr {

// rho_{c,r}(d | q) for every catalog item, with per-item standard errors
// (zero for the exact backend).
struct DocWeightEstimate {
  UserId query = 0;
  std::vector<double> weights;
  std::vector<double> std_err;
  std::size_t n_samples = 0;

  double weight(ItemId d) const { return weights.at(static_cast<std::size_t>(d)); }
  double total() const { return tree_sum(weights); }
};

struct UtilityEstimate {
  double value = 0.0;
  std::vector<double> contributions;
};

enum class Backend { kAuto, kMonteCarlo, kExact };

inline bool use_exact(Backend b, std::size_t n_items) {
  return b == Backend::kExact || (b == Backend::kAuto && n_items <= pl::kMaxEnumerationSupport);
}

inline DocWeightEstimate doc_weights_mc(const PLPolicy& candidate, const PLPolicy& reranker, UserId query,
                                        std::size_t K2, std::size_t K, std::size_t n_samples,
                                        const ExaminationModel& exam, Rng& rng) {
  if (n_samples == 0) throw ArgumentError("doc_weights_mc needs n_samples >= 1");
  TwoStageSampler sampler(candidate, reranker, query, K2, K);
  const std::size_t n_items = candidate.model.n_items();
  std::vector<double> sum(n_items, 0.0), sum_sq(n_items, 0.0);
  TwoStageDraw draw;
  for (std::size_t s = 0; s < n_samples; ++s) {
    sampler.draw(rng, draw);
    for (std::size_t j = 0; j < K; ++j) {
      const double e = exam.prob(j + 1);
      const ItemId d = draw.displayed_item(j);
      sum[d] += e;
      sum_sq[d] += e * e;
    }
  }
  DocWeightEstimate out;
  out.query = query;
  out.n_samples = n_samples;
  out.weights.resize(n_items);
  out.std_err.assign(n_items, 0.0);
  const double n = static_cast<double>(n_samples);
  for (std::size_t d = 0; d < n_items; ++d) {
    const double m = sum[d] / n;
    out.weights[d] = m;
    if (n_samples > 1) {
      const double var = std::max(0.0, (sum_sq[d] - n * m * m) / (n - 1.0));
      out.std_err[d] = std::sqrt(var / n);
    }
  }
  return out;
}

inline DocWeightEstimate doc_weights_exact(const PLPolicy& candidate, const PLPolicy& reranker, UserId query,
                                           std::size_t K2, std::size_t K, const ExaminationModel& exam) {
  DocWeightEstimate out;
  out.query = query;
  out.weights.assign(candidate.model.n_items(), 0.0);
  out.std_err.assign(candidate.model.n_items(), 0.0);
  for_each_two_stage(candidate, reranker, query, K2, K, [&](const TwoStageOutcome& o) {
    for (std::size_t j = 0; j < o.displayed.size(); ++j) out.weights[o.displayed[j]] += o.probability * exam.prob(j + 1);
  });
  return out;
}

using WeightsFn = std::function<DocWeightEstimate(UserId)>;

// U-hat = (1/N) sum_i sum_{clicked d} rho_{c,r}(d) / rho_0(d). Only clicked
// slots are visited; `weights_fn` is called once per distinct query.
inline UtilityEstimate ips_utility(const ClickLog& log, const WeightsFn& weights_fn, const PropensityTable& rho0) {
  if (log.empty()) throw ArgumentError("ips_utility needs a nonempty log");
  std::unordered_map<UserId, DocWeightEstimate> cache;
  UtilityEstimate out;
  out.contributions.reserve(log.size());
  for (const ClickRecord& r : log.records) {
    double c = 0.0;
    for (std::size_t j = 0; j < r.clicks.size(); ++j) {
      if (!r.clicks[j]) continue;
      const ItemId d = r.displayed[j];
      const double p0 = rho0.require(r.query, d);
      auto it = cache.find(r.query);
      if (it == cache.end()) it = cache.emplace(r.query, weights_fn(r.query)).first;
      c += it->second.weight(d) / p0;
    }
    out.contributions.push_back(c);
  }
  out.value = mean_of(out.contributions);
  return out;
}

// U = mean over users of sum_d rho_{c,r}(d | q) R(q, d).
inline UtilityEstimate true_utility(const PLPolicy& candidate, const PLPolicy& reranker, const RelevanceMatrix& rel,
                                    std::span<const UserId> users, std::size_t K2, std::size_t K,
                                    const ExaminationModel& exam, std::size_t n_samples, std::uint64_t seed,
                                    Backend backend = Backend::kAuto, std::size_t workers = 1) {
  if (users.empty()) throw ArgumentError("true_utility needs a nonempty user set");
  const bool exact = use_exact(backend, candidate.model.n_items());
  UtilityEstimate out;
  out.contributions.assign(users.size(), 0.0);
  parallel_for(users.size(), workers, [&](std::size_t i) {
    const UserId q = users[i];
    DocWeightEstimate w;
    if (exact) {
      w = doc_weights_exact(candidate, reranker, q, K2, K, exam);
    } else {
      Rng rng = child_stream(seed, {0x7017, static_cast<std::uint64_t>(q)});
      w = doc_weights_mc(candidate, reranker, q, K2, K, n_samples, exam, rng);
    }
    double u = 0.0;
    for (ItemId d : rel.relevant_items(q)) u += w.weight(d);
    out.contributions[i] = u;
  });
  out.value = mean_of(out.contributions);
  return out;
}

inline constexpr std::size_t kNdcgCutoff = 10;

// DCG of a displayed list against binary relevance, truncated at 10.
inline double dcg_at_10(const RelevanceMatrix& rel, UserId q, std::span<const ItemId> displayed) {
  double dcg = 0.0;
  const std::size_t n = std::min(displayed.size(), kNdcgCutoff);
  for (std::size_t j = 0; j < n; ++j)
    if (rel.rel(q, displayed[j])) dcg += 1.0 / std::log2(static_cast<double>(j) + 2.0);
  return dcg;
}

inline double ideal_dcg_at_10(std::size_t n_relevant) {
  double dcg = 0.0;
  for (std::size_t j = 0; j < std::min(n_relevant, kNdcgCutoff); ++j) dcg += 1.0 / std::log2(static_cast<double>(j) + 2.0);
  return dcg;
}

struct NdcgResult {
  double value = 0.0;
  std::vector<double> per_user;  // evaluated users only, in input order
  std::size_t skipped_users = 0; // users without any relevant item
};

inline NdcgResult ndcg_at_10(const PLPolicy& candidate, const PLPolicy& reranker, const RelevanceMatrix& rel,
                             std::span<const UserId> eval_users, std::size_t K2, std::size_t K,
                             std::size_t n_samples, std::uint64_t seed, Backend backend = Backend::kAuto,
                             std::size_t workers = 1) {
  const bool exact = use_exact(backend, candidate.model.n_items());
  if (!exact && n_samples == 0) throw ArgumentError("ndcg_at_10 needs n_samples >= 1");
  std::vector<double> value(eval_users.size(), 0.0);
  std::vector<char> evaluated(eval_users.size(), 0);
  parallel_for(eval_users.size(), workers, [&](std::size_t i) {
    const UserId q = eval_users[i];
    const std::size_t n_rel = rel.count_relevant(q);
    if (n_rel == 0) return;
    evaluated[i] = 1;
    const double ideal = ideal_dcg_at_10(n_rel);
    std::vector<ItemId> shown(K);
    if (exact) {
      double acc = 0.0;
      for_each_two_stage(candidate, reranker, q, K2, K, [&](const TwoStageOutcome& o) {
        for (std::size_t j = 0; j < K; ++j) shown[j] = static_cast<ItemId>(o.displayed[j]);
        acc += o.probability * dcg_at_10(rel, q, shown);
      });
      value[i] = acc / ideal;
      return;
    }
    Rng rng = child_stream(seed, {0x9dc6, static_cast<std::uint64_t>(q)});
    TwoStageSampler sampler(candidate, reranker, q, K2, K);
    TwoStageDraw draw;
    std::vector<double> per_sample(n_samples);
    for (std::size_t s = 0; s < n_samples; ++s) {
      sampler.draw(rng, draw);
      for (std::size_t j = 0; j < K; ++j) shown[j] = draw.displayed_item(j);
      per_sample[s] = dcg_at_10(rel, q, shown) / ideal;
    }
    value[i] = mean_of(per_sample);
  });
  NdcgResult out;
  for (std::size_t i = 0; i < eval_users.size(); ++i) {
    if (evaluated[i])
      out.per_user.push_back(value[i]);
    else
      ++out.skipped_users;
  }
  out.value = mean_of(out.per_user);
  return out;
}

}  // namespace tscltr

#endif  // TSCLTR_ESTIMATOR_HPP_
