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

#ifndef TSCLTR_PIPELINE_HPP_
#define TSCLTR_PIPELINE_HPP_

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "tscltr/common.hpp"
#include "tscltr/policy.hpp"

namespace tscltr {

// Position-based examination: P(E = 1 | k) = 1/k up to the cutoff, else 0.
struct ExaminationModel {
  std::size_t cutoff = 10;

  double prob(std::size_t rank) const {
    if (rank == 0 || rank > cutoff) return 0.0;
    return 1.0 / static_cast<double>(rank);
  }
  // Total examination mass of the first K slots.
  double slot_mass(std::size_t K) const {
    double s = 0.0;
    for (std::size_t k = 1; k <= K; ++k) s += prob(k);
    return s;
  }
};

inline void check_list_sizes(std::size_t K2, std::size_t K, std::size_t n_items) {
  if (K == 0) throw ArgumentError("display length K must be positive");
  if (K > K2) throw ArgumentError("display length K=" + std::to_string(K) + " exceeds candidate length K2=" + std::to_string(K2));
  if (K2 > n_items)
    throw ArgumentError("candidate length K2=" + std::to_string(K2) + " exceeds catalog size " + std::to_string(n_items));
}

// One draw of the two-stage pipeline. `candidates` holds catalog item ids of
// y_c; `display` holds positions into `candidates` of y_r.
struct TwoStageDraw {
  std::vector<std::uint32_t> candidates;
  std::vector<std::uint32_t> display;
  std::vector<double> support_scores;

  ItemId displayed_item(std::size_t pos) const { return static_cast<ItemId>(candidates[display[pos]]); }
};

// Samples y_c ~ pi_c(. | q) over the catalog, then y_r ~ pi_r(. | set(y_c), q).
// Both score vectors are computed once per query.
class TwoStageSampler {
 public:
  TwoStageSampler(const PLPolicy& candidate, const PLPolicy& reranker, UserId query, std::size_t K2,
                  std::size_t K)
      : K2_(K2), K_(K) {
    if (candidate.model.n_items() != reranker.model.n_items())
      throw ArgumentError("candidate and re-ranker catalogs differ");
    check_list_sizes(K2, K, candidate.model.n_items());
    scores_all(candidate, query, candidate_scores_);
    scores_all(reranker, query, reranker_scores_);
    first_.reset(candidate_scores_);
  }

  void draw(Rng& rng, TwoStageDraw& out) {
    first_.sample(K2_, rng, out.candidates);
    out.support_scores.resize(K2_);
    for (std::size_t i = 0; i < K2_; ++i) out.support_scores[i] = reranker_scores_[out.candidates[i]];
    second_.reset(out.support_scores);
    second_.sample(K_, rng, out.display);
  }

  const std::vector<double>& candidate_scores() const { return candidate_scores_; }
  const std::vector<double>& reranker_scores() const { return reranker_scores_; }
  std::size_t K2() const { return K2_; }
  std::size_t K() const { return K_; }

 private:
  std::size_t K2_;
  std::size_t K_;
  std::vector<double> candidate_scores_;
  std::vector<double> reranker_scores_;
  pl::TreeSampler first_;
  pl::TreeSampler second_;
};

// One exactly enumerated (y_c, y_r) pair; both lists hold catalog item ids.
struct TwoStageOutcome {
  std::vector<std::uint32_t> candidates;
  std::vector<std::uint32_t> displayed;
  double probability;
};

// Visits every (y_c, y_r) pair with P(y_c) P(y_r | y_c). Small catalogs only.
inline void for_each_two_stage(const PLPolicy& candidate, const PLPolicy& reranker, UserId query,
                               std::size_t K2, std::size_t K,
                               const std::function<void(const TwoStageOutcome&)>& visit) {
  const std::size_t n = candidate.model.n_items();
  if (n > pl::kMaxEnumerationSupport)
    throw GuardError("exact two-stage enumeration needs n_items <= " + std::to_string(pl::kMaxEnumerationSupport));
  check_list_sizes(K2, K, n);
  std::vector<double> cs, rs;
  scores_all(candidate, query, cs);
  scores_all(reranker, query, rs);
  TwoStageOutcome o;
  std::vector<double> sub(K2);
  for (const auto& yc : pl::enumerate(cs, K2)) {
    for (std::size_t i = 0; i < K2; ++i) sub[i] = rs[yc.order[i]];
    for (const auto& yr : pl::enumerate(sub, K)) {
      o.candidates = yc.order;
      o.displayed.resize(K);
      for (std::size_t j = 0; j < K; ++j) o.displayed[j] = yc.order[yr.order[j]];
      o.probability = yc.probability * yr.probability;
      visit(o);
    }
  }
}

}  // namespace tscltr

#endif  // TSCLTR_PIPELINE_HPP_
