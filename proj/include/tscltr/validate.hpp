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

#ifndef TSCLTR_VALIDATE_HPP_
#define TSCLTR_VALIDATE_HPP_

// Oracle suites that compare the estimators, samplers and gradients against
// exact enumeration on tiny worlds. Used by the CLI and the acceptance tests.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <boost/math/distributions/chi_squared.hpp>

#include "tscltr/clicksim.hpp"
#include "tscltr/common.hpp"
#include "tscltr/estimator.hpp"
#include "tscltr/pipeline.hpp"
#include "tscltr/policy.hpp"
#include "tscltr/trainer.hpp"

namespace tscltr::validate {

struct SuiteResult {
  std::string name;
  bool passed = true;
  std::vector<std::string> lines;

  void check(bool ok, const std::string& line) {
    passed = passed && ok;
    lines.push_back((ok ? "ok   " : "FAIL ") + line);
  }
};

inline std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

// A random single-query world: logging and target pipelines with N(0, 1)
// scores and a binary relevance vector with at least one relevant item.
struct TinyWorld {
  std::size_t n_items = 0;
  std::size_t K2 = 0;
  std::size_t K = 0;
  PLPolicy log_candidate, log_reranker, candidate, reranker;
  std::vector<int> relevance;
};

inline TinyWorld random_tiny_world(Rng& rng, std::size_t max_items = 5, std::size_t max_k2 = 4, std::size_t max_k = 2) {
  TinyWorld w;
  w.K = std::uniform_int_distribution<std::size_t>(1, max_k)(rng);
  w.K2 = std::uniform_int_distribution<std::size_t>(std::max<std::size_t>(w.K, 2), max_k2)(rng);
  w.n_items = std::uniform_int_distribution<std::size_t>(w.K2, max_items)(rng);
  std::normal_distribution<double> z(0.0, 1.0);
  auto policy = [&] {
    std::vector<double> s(w.n_items);
    for (double& x : s) x = z(rng);
    return policy_from_scores(s);
  };
  w.log_candidate = policy();
  w.log_reranker = policy();
  w.candidate = policy();
  w.reranker = policy();
  w.relevance.assign(w.n_items, 0);
  std::bernoulli_distribution coin(0.5);
  for (int& r : w.relevance) r = coin(rng) ? 1 : 0;
  w.relevance[std::uniform_int_distribution<std::size_t>(0, w.n_items - 1)(rng)] = 1;
  return w;
}

inline RelevanceMatrix tiny_relevance(const TinyWorld& w) {
  std::vector<std::pair<UserId, ItemId>> pairs;
  for (std::size_t d = 0; d < w.n_items; ++d)
    if (w.relevance[d]) pairs.emplace_back(0, static_cast<ItemId>(d));
  return RelevanceMatrix(1, w.n_items, pairs);
}

// E[U-hat] over every logging ranking and click outcome, with the exact
// logging propensities, against the true utility U of the target pipeline.
// `propensity_scale` != 1 mis-specifies rho_0 (a negative control).
inline SuiteResult unbiasedness(std::size_t n_worlds = 50, std::uint64_t seed = 1, double tol = 1e-10,
                                double propensity_scale = 1.0) {
  SuiteResult res{"unbiasedness"};
  const ExaminationModel exam{};
  Rng rng(seed);
  double worst = 0.0;
  for (std::size_t wi = 0; wi < n_worlds; ++wi) {
    const TinyWorld w = random_tiny_world(rng);
    const TwoStageLoggingPolicy logging{w.log_candidate, w.log_reranker, w.K2, w.K};
    const std::vector<double> rho0_exact = exact_propensities(logging, 0, exam);
    PropensityTable rho0(1e-300);
    for (std::size_t d = 0; d < w.n_items; ++d) rho0.set(0, static_cast<ItemId>(d), rho0_exact[d] * propensity_scale);
    const DocWeightEstimate target = doc_weights_exact(w.candidate, w.reranker, 0, w.K2, w.K, exam);
    const WeightsFn weights = [&](UserId) { return target; };

    double expectation = 0.0;
    for_each_two_stage(w.log_candidate, w.log_reranker, 0, w.K2, w.K, [&](const TwoStageOutcome& o) {
      std::vector<ItemId> shown(o.displayed.begin(), o.displayed.end());
      ClickLog one;
      one.records.push_back({0, Ranking(shown), std::vector<std::uint8_t>(w.K, 0)});
      ClickRecord& r = one.records[0];
      for (std::size_t mask = 0; mask < (std::size_t{1} << w.K); ++mask) {
        double p = o.probability;
        for (std::size_t j = 0; j < w.K; ++j) {
          const double pc = exam.prob(j + 1) * w.relevance[shown[j]];
          const bool clicked = (mask >> j) & 1U;
          r.clicks[j] = clicked ? 1 : 0;
          p *= clicked ? pc : 1.0 - pc;
        }
        if (p == 0.0) continue;
        expectation += p * ips_utility(one, weights, rho0).value;
      }
    });
    const UtilityEstimate u = true_utility(w.candidate, w.reranker, tiny_relevance(w), std::vector<UserId>{0}, w.K2,
                                           w.K, exam, 0, 0, Backend::kExact);
    worst = std::max(worst, std::abs(expectation - u.value));
  }
  res.check(worst <= tol, fmt("max |E[U-hat] - U| over %.0f worlds = %.3g (tol %.0e)", double(n_worlds), worst, tol));
  return res;
}

// Pearson chi-square statistic and its upper-tail p-value.
struct ChiSquare {
  double statistic = 0.0;
  double p_value = 1.0;
  std::size_t dof = 0;
};

inline ChiSquare chi_square(const std::vector<double>& observed, const std::vector<double>& expected) {
  ChiSquare c;
  for (std::size_t i = 0; i < observed.size(); ++i) {
    const double d = observed[i] - expected[i];
    c.statistic += d * d / expected[i];
  }
  c.dof = observed.size() - 1;
  c.p_value = boost::math::cdf(boost::math::complement(boost::math::chi_squared(static_cast<double>(c.dof)), c.statistic));
  return c;
}

// Empirical top-L frequencies of the Gumbel sampler, the sum-tree sampler
// and the two-stage sampler against exact enumeration.
inline SuiteResult sampler(std::size_t n_samples = 200000, std::uint64_t seed = 2, double alpha = 1e-3,
                           double max_tv = 0.01) {
  SuiteResult res{"sampler"};
  const std::vector<double> scores{0.8, -0.3, 0.1, -1.2};
  const std::size_t L = 2;
  const auto exact = pl::enumerate(scores, L);
  std::map<std::vector<std::uint32_t>, std::size_t> index;
  for (std::size_t i = 0; i < exact.size(); ++i) index[exact[i].order] = i;

  auto evaluate = [&](const std::string& name, auto&& draw) {
    std::vector<double> counts(exact.size(), 0.0);
    Rng rng(seed);
    std::vector<std::uint32_t> y;
    for (std::size_t s = 0; s < n_samples; ++s) {
      draw(rng, y);
      counts[index.at(y)] += 1.0;
    }
    std::vector<double> expected(exact.size());
    double tv = 0.0;
    for (std::size_t i = 0; i < exact.size(); ++i) {
      expected[i] = exact[i].probability * static_cast<double>(n_samples);
      tv += std::abs(counts[i] / static_cast<double>(n_samples) - exact[i].probability);
    }
    tv *= 0.5;
    const ChiSquare c = chi_square(counts, expected);
    res.check(c.p_value >= alpha, name + fmt(": chi2 = %.2f on %.0f dof, p = %.4f", c.statistic, double(c.dof), c.p_value));
    res.check(tv < max_tv, name + fmt(": TV = %.5f (limit %.3f)", tv, max_tv));
  };

  pl::SampleWorkspace ws;
  evaluate("gumbel top-k", [&](Rng& rng, std::vector<std::uint32_t>& y) { pl::sample_topk(scores, L, rng, ws, y); });
  pl::TreeSampler tree(scores);
  evaluate("sum-tree", [&](Rng& rng, std::vector<std::uint32_t>& y) { tree.sample(L, rng, y); });

  // Two-stage: displayed catalog items of a 5-item, K2 = 3, K = 2 pipeline.
  const PLPolicy cand = policy_from_scores(std::vector<double>{0.5, -0.2, 1.0, 0.0, -0.7});
  const PLPolicy rer = policy_from_scores(std::vector<double>{-0.4, 0.9, 0.3, 0.2, 0.6});
  std::map<std::vector<std::uint32_t>, double> exact2;
  for_each_two_stage(cand, rer, 0, 3, 2, [&](const TwoStageOutcome& o) { exact2[o.displayed] += o.probability; });
  std::vector<double> counts(exact2.size(), 0.0), expected;
  std::map<std::vector<std::uint32_t>, std::size_t> idx2;
  for (auto& [k, p] : exact2) {
    idx2[k] = expected.size();
    expected.push_back(p * static_cast<double>(n_samples));
  }
  TwoStageSampler ts(cand, rer, 0, 3, 2);
  TwoStageDraw draw;
  Rng rng(seed + 1);
  std::vector<std::uint32_t> shown(2);
  for (std::size_t s = 0; s < n_samples; ++s) {
    ts.draw(rng, draw);
    for (std::size_t j = 0; j < 2; ++j) shown[j] = static_cast<std::uint32_t>(draw.displayed_item(j));
    counts[idx2.at(shown)] += 1.0;
  }
  double tv = 0.0;
  for (std::size_t i = 0; i < counts.size(); ++i)
    tv += std::abs(counts[i] - expected[i]) / static_cast<double>(n_samples);
  tv *= 0.5;
  const ChiSquare c = chi_square(counts, expected);
  res.check(c.p_value >= alpha, fmt("two-stage: chi2 = %.2f on %.0f dof, p = %.4f", c.statistic, double(c.dof), c.p_value));
  res.check(tv < max_tv, fmt("two-stage: TV = %.5f (limit %.3f)", tv, max_tv));
  return res;
}

// U-hat for one query as a function of raw scores, via the exact backend.
inline double ips_value(const std::vector<double>& cand_scores, const std::vector<double>& rer_scores,
                        const std::vector<ItemId>& items, const std::vector<double>& weights, std::size_t K2,
                        std::size_t K) {
  const DocWeightEstimate w =
      doc_weights_exact(policy_from_scores(cand_scores), policy_from_scores(rer_scores), 0, K2, K, ExaminationModel{});
  double v = 0.0;
  for (std::size_t t = 0; t < items.size(); ++t) v += weights[t] * w.weight(items[t]);
  return v;
}

// Exact score gradients against central differences, and Monte-Carlo
// gradients against the exact values.
inline SuiteResult gradients(std::size_t n_worlds = 10, std::size_t mc_samples = 20000, std::uint64_t seed = 3,
                             double h = 1e-5, double max_rel = 1e-6, double n_se = 3.0) {
  SuiteResult res{"gradients"};
  Rng rng(seed);
  double worst_rel = 0.0;
  std::size_t coords = 0, outside = 0;
  double worst_z = 0.0;
  for (std::size_t wi = 0; wi < n_worlds; ++wi) {
    const TinyWorld w = random_tiny_world(rng);
    std::vector<double> cs(w.n_items), rs(w.n_items);
    for (std::size_t d = 0; d < w.n_items; ++d) {
      cs[d] = w.candidate.model.score(0, static_cast<ItemId>(d));
      rs[d] = w.reranker.model.score(0, static_cast<ItemId>(d));
    }
    // Click weights 1 / rho_0 on the relevant items, as a log would give.
    const std::vector<double> rho0 =
        exact_propensities(TwoStageLoggingPolicy{w.log_candidate, w.log_reranker, w.K2, w.K}, 0);
    std::vector<ItemId> items;
    std::vector<double> weights;
    for (std::size_t d = 0; d < w.n_items; ++d)
      if (w.relevance[d]) {
        items.push_back(static_cast<ItemId>(d));
        weights.push_back(1.0 / rho0[d]);
      }
    GradientOptions opt;
    opt.K2 = w.K2;
    opt.K = w.K;
    opt.n_mc = mc_samples;
    opt.track_variance = true;
    // Central differences resolve about eps * |U| / h, so entries that are
    // zero by symmetry are compared against a floor well above that.
    const double fd_floor = 1e-4 * std::abs(ips_value(cs, rs, items, weights, w.K2, w.K));
    for (GradientTarget target : {GradientTarget::kCandidate, GradientTarget::kReranker}) {
      const QueryGradient exact = query_score_gradient_exact(target, w.candidate, &w.reranker, 0, items, weights, opt);
      for (std::size_t d = 0; d < w.n_items; ++d) {
        std::vector<double> up = target == GradientTarget::kCandidate ? cs : rs, down = up;
        up[d] += h;
        down[d] -= h;
        const bool cand = target == GradientTarget::kCandidate;
        const double fu = ips_value(cand ? up : cs, cand ? rs : up, items, weights, w.K2, w.K);
        const double fd = ips_value(cand ? down : cs, cand ? rs : down, items, weights, w.K2, w.K);
        const double numeric = (fu - fd) / (2.0 * h);
        const double g = exact.score_grad[d];
        const double denom = std::max({std::abs(g), std::abs(numeric), fd_floor});
        worst_rel = std::max(worst_rel, std::abs(g - numeric) / denom);
      }
      Rng mc_rng = child_stream(seed, {wi, static_cast<std::uint64_t>(target)});
      const QueryGradient mc = query_score_gradient(target, w.candidate, &w.reranker, 0, items, weights, opt, mc_rng);
      for (std::size_t d = 0; d < w.n_items; ++d) {
        ++coords;
        const double diff = std::abs(mc.score_grad[d] - exact.score_grad[d]);
        const double se = mc.score_grad_se[d];
        const double z = se > 0.0 ? diff / se : (diff <= 1e-12 ? 0.0 : std::numeric_limits<double>::infinity());
        worst_z = std::max(worst_z, z);
        if (z > n_se) ++outside;
      }
    }
  }
  res.check(worst_rel < max_rel, fmt("exact vs central differences (h = %.0e): max relative error %.3g (limit %.0e, floor 1e-4 |U|)", h,
                                     worst_rel, max_rel));
  res.check(outside == 0, fmt("MC (%.0f samples) vs exact: %.0f of %.0f coordinates beyond 3 SE", double(mc_samples),
                              double(outside), double(coords)) +
                              fmt(", max |z| = %.2f", worst_z));
  return res;
}

// sum_d rho_{c,r}(d) equals the examination mass of K slots.
inline SuiteResult slot_mass(std::size_t n_worlds = 20, std::size_t mc_samples = 300, std::uint64_t seed = 4,
                             double n_se = 3.0) {
  SuiteResult res{"slot-mass"};
  const ExaminationModel exam{};
  Rng rng(seed);
  double worst_exact = 0.0, worst_z = 0.0;
  bool mc_ok = true;
  for (std::size_t wi = 0; wi < n_worlds; ++wi) {
    const TinyWorld w = random_tiny_world(rng, 6, 5, 3);
    const double expected = exam.slot_mass(w.K);
    const double exact = doc_weights_exact(w.candidate, w.reranker, 0, w.K2, w.K, exam).total();
    worst_exact = std::max(worst_exact, std::abs(exact - expected));
    // Per-sample totals; their mean and standard error.
    Rng mc_rng = child_stream(seed, {wi});
    TwoStageSampler s(w.candidate, w.reranker, 0, w.K2, w.K);
    TwoStageDraw draw;
    std::vector<double> totals(mc_samples);
    std::vector<double> mass(w.n_items);
    for (std::size_t m = 0; m < mc_samples; ++m) {
      s.draw(mc_rng, draw);
      std::fill(mass.begin(), mass.end(), 0.0);
      for (std::size_t j = 0; j < w.K; ++j) mass[draw.displayed_item(j)] += exam.prob(j + 1);
      totals[m] = tree_sum(mass);
    }
    const double diff = std::abs(mean_of(totals) - expected);
    const double se = standard_error(totals);
    // Every draw fills all K slots, so the spread is pure rounding.
    if (diff > n_se * se + 1e-12) mc_ok = false;
    worst_z = std::max(worst_z, diff);
  }
  res.check(worst_exact <= 1e-12, fmt("exact backend: max |sum rho - H_K| = %.3g", worst_exact));
  res.check(mc_ok, fmt("MC backend (%.0f samples): max |mean - H_K| = %.3g, within 3 SE", double(mc_samples), worst_z));
  return res;
}

}  // namespace tscltr::validate

#endif  // TSCLTR_VALIDATE_HPP_
