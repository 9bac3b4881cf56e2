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

#ifndef TSCLTR_TRAINER_HPP_
#define TSCLTR_TRAINER_HPP_

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <cstdio>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tscltr/clicksim.hpp"
#include "tscltr/common.hpp"
#include "tscltr/dataset.hpp"
#include "tscltr/estimator.hpp"
#include "tscltr/pipeline.hpp"
#include "tscltr/policy.hpp"

namespace tscltr {

enum class Regime { kBaseline, kIndependent, kJoint };

inline std::string regime_name(Regime r) {
  switch (r) {
    case Regime::kBaseline: return "baseline";
    case Regime::kIndependent: return "independent";
    case Regime::kJoint: return "joint";
  }
  return "unknown";
}

inline Regime parse_regime(const std::string& s) {
  if (s == "baseline") return Regime::kBaseline;
  if (s == "independent") return Regime::kIndependent;
  if (s == "joint") return Regime::kJoint;
  throw ConfigError("unknown regime '" + s + "'");
}

struct TrainConfig {
  Regime regime = Regime::kJoint;
  std::size_t K2 = 100;
  std::size_t K = 10;
  std::size_t n_mc = 300;
  std::size_t batch_size = 32;  // queries per minibatch
  std::size_t max_epochs = 30;
  std::size_t patience = 5;
  double learning_rate = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  double validation_frac = 0.1;
  std::size_t validation_mc = 100;
  // Epoch budget of the Baseline re-ranker pre-training.
  std::size_t pretrain_epochs = 30;
  // Baseline re-ranker pre-training through the logging candidate generator
  // instead of the single-stage objective.
  bool pretrain_through_logging_candidate = false;
  double propensity_floor = 0.0;  // <= 0 means 1 / K2
  bool control_variate = false;
  double temperature = 1.0;
  std::size_t workers = 1;
  std::uint64_t seed = 0;

  double effective_floor() const { return propensity_floor > 0.0 ? propensity_floor : 1.0 / static_cast<double>(K2); }

  void validate() const {
    if (n_mc == 0) throw ConfigError("n_mc must be >= 1");
    if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
    if (K == 0 || K > K2) throw ConfigError("need 1 <= K <= K2");
    if (!(learning_rate >= 0.0)) throw ConfigError("learning rate must be non-negative");
    if (!(validation_frac >= 0.0 && validation_frac < 1.0)) throw ConfigError("validation_frac must lie in [0, 1)");
    if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
  }
};

// Sparse gradient over a FactorModel's rows. Storage is dense; only rows
// marked touched take part in updates.
class GradAccumulator {
 public:
  GradAccumulator() = default;
  GradAccumulator(std::size_t n_users, std::size_t n_items, std::size_t dim)
      : dim_(dim), user_(n_users * dim, 0.0), item_(n_items * dim, 0.0),
        user_touched_(n_users, 0), item_touched_(n_items, 0) {}
  explicit GradAccumulator(const FactorModel& shape)
      : GradAccumulator(shape.n_users(), shape.n_items(), shape.dim()) {}

  std::size_t dim() const { return dim_; }

  std::span<double> user_row(UserId u) {
    if (!user_touched_[u]) {
      user_touched_[u] = 1;
      user_rows_.push_back(u);
    }
    return {user_.data() + static_cast<std::size_t>(u) * dim_, dim_};
  }
  std::span<double> item_row(ItemId d) {
    if (!item_touched_[d]) {
      item_touched_[d] = 1;
      item_rows_.push_back(d);
    }
    return {item_.data() + static_cast<std::size_t>(d) * dim_, dim_};
  }
  std::span<const double> user_row(UserId u) const { return {user_.data() + static_cast<std::size_t>(u) * dim_, dim_}; }
  std::span<const double> item_row(ItemId d) const { return {item_.data() + static_cast<std::size_t>(d) * dim_, dim_}; }

  const std::vector<UserId>& touched_users() const { return user_rows_; }
  const std::vector<ItemId>& touched_items() const { return item_rows_; }
  bool empty() const { return user_rows_.empty() && item_rows_.empty(); }

  void scale(double factor) {
    for (double& x : user_) x *= factor;
    for (double& x : item_) x *= factor;
  }

  bool all_finite() const {
    auto fin = [](double x) { return std::isfinite(x); };
    return std::all_of(user_.begin(), user_.end(), fin) && std::all_of(item_.begin(), item_.end(), fin);
  }

  // Chains d objective / d score (catalog-indexed) of `query` into the rows:
  // score = <u, v_d> / T.
  void add_score_gradient(const PLPolicy& policy, UserId query, std::span<const double> score_grad, double weight) {
    const std::size_t n = policy.model.n_items();
    const auto u = policy.model.user(query);
    const double inv_t = weight / policy.temperature;
    auto urow = user_row(query);
    for (std::size_t d = 0; d < n; ++d) {
      const double g = score_grad[d] * inv_t;
      if (g == 0.0) continue;
      const auto v = policy.model.item(static_cast<ItemId>(d));
      auto irow = item_row(static_cast<ItemId>(d));
      for (std::size_t k = 0; k < dim_; ++k) {
        urow[k] += g * v[k];
        irow[k] += g * u[k];
      }
    }
  }

 private:
  std::size_t dim_ = 0;
  std::vector<double> user_;
  std::vector<double> item_;
  std::vector<char> user_touched_;
  std::vector<char> item_touched_;
  std::vector<UserId> user_rows_;
  std::vector<ItemId> item_rows_;
};

// Adaptive-moment state for one FactorModel.
struct OptimizerState {
  double learning_rate = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t step = 0;
  std::vector<double> m_user, v_user, m_item, v_item;

  OptimizerState() = default;
  OptimizerState(const FactorModel& shape, double lr, double b1 = 0.9, double b2 = 0.999, double eps = 1e-8)
      : learning_rate(lr), beta1(b1), beta2(b2), epsilon(eps),
        m_user(shape.user_data().size(), 0.0), v_user(shape.user_data().size(), 0.0),
        m_item(shape.item_data().size(), 0.0), v_item(shape.item_data().size(), 0.0) {}
};

// One ascent step on the touched rows of `grads`.
inline void optimizer_step(OptimizerState& state, FactorModel& model, const GradAccumulator& grads) {
  if (state.m_user.size() != model.user_data().size() || state.m_item.size() != model.item_data().size() ||
      grads.dim() != model.dim())
    throw ArgumentError("optimizer state, model and gradient shapes differ");
  if (!grads.all_finite()) throw NumericError("non-finite gradient passed to optimizer_step");
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  const std::size_t dim = model.dim();
  auto update = [&](std::span<const double> g, double* p, double* m, double* v) {
    for (std::size_t k = 0; k < dim; ++k) {
      m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * g[k];
      v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * g[k] * g[k];
      p[k] += state.learning_rate * (m[k] / c1) / (std::sqrt(v[k] / c2) + state.epsilon);
    }
  };
  for (UserId u : grads.touched_users()) {
    const std::size_t off = static_cast<std::size_t>(u) * dim;
    update(grads.user_row(u), model.user_data().data() + off, state.m_user.data() + off, state.v_user.data() + off);
  }
  for (ItemId d : grads.touched_items()) {
    const std::size_t off = static_cast<std::size_t>(d) * dim;
    update(grads.item_row(d), model.item_data().data() + off, state.m_item.data() + off, state.v_item.data() + off);
  }
  if (!model.all_finite()) throw NumericError("optimizer_step produced non-finite parameters");
}

// Per-query objective weights W_q(d): the summed 1/rho_0 of every click on d
// (or true relevance when training on labels), plus the query's record count.
struct QueryTarget {
  UserId query = 0;
  std::size_t n_records = 0;
  std::vector<ItemId> items;
  std::vector<double> weights;
};

struct TargetSet {
  std::vector<QueryTarget> queries;  // sorted by query id
  std::size_t n_records = 0;

  std::size_t total_targets() const {
    std::size_t n = 0;
    for (const auto& q : queries) n += q.items.size();
    return n;
  }
};

inline TargetSet targets_from_records(std::span<const ClickRecord> records, const PropensityTable& rho0) {
  std::map<UserId, std::map<ItemId, double>> w;
  std::map<UserId, std::size_t> counts;
  for (const ClickRecord& r : records) {
    ++counts[r.query];
    for (std::size_t j = 0; j < r.clicks.size(); ++j)
      if (r.clicks[j]) w[r.query][r.displayed[j]] += 1.0 / rho0.require(r.query, r.displayed[j]);
  }
  TargetSet out;
  out.n_records = records.size();
  for (auto& [q, n] : counts) {
    QueryTarget t;
    t.query = q;
    t.n_records = n;
    if (auto it = w.find(q); it != w.end())
      for (auto [d, x] : it->second) {
        t.items.push_back(d);
        t.weights.push_back(x);
      }
    out.queries.push_back(std::move(t));
  }
  return out;
}

// Supervised targets W_q(d) = R(q, d), one pseudo-record per user.
inline TargetSet targets_from_relevance(const RelevanceMatrix& rel, std::span<const UserId> users) {
  TargetSet out;
  for (UserId q : users) {
    QueryTarget t;
    t.query = q;
    t.n_records = 1;
    for (ItemId d : rel.relevant_items(q)) {
      t.items.push_back(d);
      t.weights.push_back(1.0);
    }
    out.queries.push_back(std::move(t));
  }
  std::sort(out.queries.begin(), out.queries.end(), [](const auto& a, const auto& b) { return a.query < b.query; });
  out.n_records = users.size();
  return out;
}

// Accumulates weight * d log P(order) / d scores for PL prefixes over one
// fixed score vector. Unselected items share a single coefficient, so each
// call costs O(L) instead of O(n); finish() applies the shared part. A call
// whose unselected mass is tiny would inflate that coefficient and cancel
// badly, so it is applied densely instead.
class CatalogPLGradient {
 public:
  explicit CatalogPLGradient(std::span<const double> scores)
      : scores_(scores), exp_shifted_(scores.size()), selected_(scores.size(), 0.0) {
    max_ = kNegInf;
    for (double s : scores) max_ = std::max(max_, s);
    for (std::size_t i = 0; i < scores.size(); ++i) exp_shifted_[i] = std::exp(scores[i] - max_);
    total_ = tree_sum(exp_shifted_);
  }

  template <typename Index>
  void add(std::span<const Index> order, double weight) {
    const std::size_t L = order.size();
    if (L == 0 || weight == 0.0) return;
    double sel = 0.0;
    for (auto i : order) sel += exp_shifted_[i];
    // Masses are in units of the largest exp(score), so total_ >= 1 and the
    // shared coefficient of the call stays below L / kDenseBelow.
    const double rest = total_ - sel;
    if (!(rest >= kDenseBelow * total_)) {
      add_dense(order, weight);
      return;
    }
    // Normalizers Z_j = rest + sum_{t >= j} e_t.
    z_.resize(L);
    double suffix = 0.0;
    for (std::size_t j = L; j-- > 0;) {
      suffix += exp_shifted_[order[j]];
      z_[j] = rest + suffix;
    }
    double p = 0.0;
    for (std::size_t j = 0; j < L; ++j) p += 1.0 / z_[j];
    shared_coef_ += weight * p;
    double prefix = 0.0;
    for (std::size_t j = 0; j < L; ++j) {
      prefix += 1.0 / z_[j];
      const auto i = order[j];
      selected_[i] += weight * (1.0 - exp_shifted_[i] * prefix) + weight * p * exp_shifted_[i];
    }
  }

  void finish(std::span<double> out) const {
    for (std::size_t i = 0; i < scores_.size(); ++i) out[i] += selected_[i] - exp_shifted_[i] * shared_coef_;
  }

 private:
  static constexpr double kDenseBelow = 1e-3;

  // Log-space normalizers, every catalog entry written directly.
  template <typename Index>
  void add_dense(std::span<const Index> order, double weight) {
    const std::size_t L = order.size();
    mask_.assign(scores_.size(), 0);
    for (auto i : order) mask_[i] = 1;
    double log_rest = kNegInf;
    for (std::size_t i = 0; i < scores_.size(); ++i)
      if (!mask_[i]) log_rest = log_add_exp(log_rest, scores_[i]);
    log_z_.resize(L);
    double suffix = kNegInf;
    for (std::size_t j = L; j-- > 0;) {
      suffix = log_add_exp(suffix, scores_[order[j]]);
      log_z_[j] = log_add_exp(log_rest, suffix);
    }
    double log_prefix = kNegInf;
    for (std::size_t j = 0; j < L; ++j) {
      log_prefix = log_add_exp(log_prefix, -log_z_[j]);
      const auto i = order[j];
      selected_[i] += weight * (1.0 - std::exp(scores_[i] + log_prefix));
    }
    for (std::size_t i = 0; i < scores_.size(); ++i)
      if (!mask_[i]) selected_[i] -= weight * std::exp(scores_[i] + log_prefix);
  }

  std::span<const double> scores_;
  std::vector<double> exp_shifted_;
  std::vector<double> selected_;
  std::vector<double> z_;
  std::vector<double> log_z_;
  std::vector<char> mask_;
  double max_ = 0.0;
  double total_ = 0.0;
  double shared_coef_ = 0.0;
};

enum class GradientTarget {
  kSingleStage,  // one PL policy ranks the whole catalog; display = its top K
  kCandidate,    // d/d pi_c of the two-stage weights, pi_r fixed
  kReranker,     // d/d pi_r of the two-stage weights, pi_c fixed
};

// Monte-Carlo estimate for one query of
//   value = sum_d W(d) rho(d)    and    grad = d value / d scores,
// with the REINFORCE form E[f(y) grad log pi(y)], f(y) = sum_d W(d) P(E | k(d | y)).
// The gradient is catalog-indexed, for the policy selected by `target`.
struct QueryGradient {
  double value = 0.0;
  double value_se = 0.0;
  std::vector<double> score_grad;
  std::vector<double> score_grad_se;  // filled when track_variance is set
};

struct GradientOptions {
  std::size_t K2 = 0;
  std::size_t K = 10;
  std::size_t n_mc = 300;
  bool control_variate = false;
  bool track_variance = false;
  ExaminationModel exam{};
};

inline QueryGradient query_score_gradient(GradientTarget target, const PLPolicy& first, const PLPolicy* second,
                                          UserId query, std::span<const ItemId> target_items,
                                          std::span<const double> target_weights, const GradientOptions& opt,
                                          Rng& rng) {
  const std::size_t n = first.model.n_items();
  const bool two_stage = target != GradientTarget::kSingleStage;
  if (two_stage && second == nullptr) throw ArgumentError("two-stage gradient needs both policies");
  if (opt.n_mc == 0) throw ArgumentError("n_mc must be >= 1");
  const std::size_t K = opt.K;
  const std::size_t L1 = two_stage ? opt.K2 : K;
  if (two_stage)
    check_list_sizes(opt.K2, K, n);
  else if (K > n)
    throw ArgumentError("display length exceeds catalog size");

  std::vector<double> w(n, 0.0);
  for (std::size_t t = 0; t < target_items.size(); ++t) w.at(static_cast<std::size_t>(target_items[t])) += target_weights[t];

  std::vector<double> s1, s2;
  scores_all(first, query, s1);
  if (two_stage) scores_all(*second, query, s2);

  // Draw every sample first so a leave-one-out baseline can be applied.
  std::vector<std::uint32_t> firsts(opt.n_mc * L1), displays(two_stage ? opt.n_mc * K : 0);
  std::vector<double> f(opt.n_mc, 0.0);
  pl::TreeSampler first_sampler(s1), second_sampler;
  std::vector<std::uint32_t> a, b;
  std::vector<double> sub(two_stage ? opt.K2 : 0);
  for (std::size_t s = 0; s < opt.n_mc; ++s) {
    first_sampler.sample(L1, rng, a);
    std::copy(a.begin(), a.end(), firsts.begin() + s * L1);
    double fs = 0.0;
    if (two_stage) {
      for (std::size_t i = 0; i < opt.K2; ++i) sub[i] = s2[a[i]];
      second_sampler.reset(sub);
      second_sampler.sample(K, rng, b);
      std::copy(b.begin(), b.end(), displays.begin() + s * K);
      for (std::size_t j = 0; j < K; ++j) fs += w[a[b[j]]] * opt.exam.prob(j + 1);
    } else {
      for (std::size_t j = 0; j < K; ++j) fs += w[a[j]] * opt.exam.prob(j + 1);
    }
    f[s] = fs;
  }

  QueryGradient out;
  const double n_mc = static_cast<double>(opt.n_mc);
  out.value = mean_of(f);
  out.value_se = standard_error(f);
  std::vector<double> coef(f);
  if (opt.control_variate && opt.n_mc > 1) {
    const double total = tree_sum(f);
    for (std::size_t s = 0; s < opt.n_mc; ++s) coef[s] = f[s] - (total - f[s]) / (n_mc - 1.0);
  }

  out.score_grad.assign(n, 0.0);
  if (opt.track_variance) {
    // Plain per-sample path that also yields per-coordinate standard errors.
    std::vector<double> sum_sq(n, 0.0), g(n);
    for (std::size_t s = 0; s < opt.n_mc; ++s) {
      std::fill(g.begin(), g.end(), 0.0);
      if (coef[s] != 0.0) {
        const std::span<const std::uint32_t> y1(firsts.data() + s * L1, L1);
        if (target == GradientTarget::kReranker) {
          std::vector<double> local(opt.K2, 0.0);
          for (std::size_t i = 0; i < opt.K2; ++i) sub[i] = s2[y1[i]];
          pl::add_grad_log_prob<std::uint32_t>(sub, std::span<const std::uint32_t>(displays.data() + s * K, K), coef[s],
                                               std::span<double>(local));
          for (std::size_t i = 0; i < opt.K2; ++i) g[y1[i]] += local[i];
        } else {
          pl::add_grad_log_prob<std::uint32_t>(s1, y1, coef[s], std::span<double>(g));
        }
      }
      for (std::size_t i = 0; i < n; ++i) {
        out.score_grad[i] += g[i];
        sum_sq[i] += g[i] * g[i];
      }
    }
    out.score_grad_se.assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const double m = out.score_grad[i] / n_mc;
      out.score_grad[i] = m;
      if (opt.n_mc > 1) out.score_grad_se[i] = std::sqrt(std::max(0.0, (sum_sq[i] - n_mc * m * m) / (n_mc - 1.0)) / n_mc);
    }
    return out;
  }

  if (target == GradientTarget::kReranker) {
    std::vector<double> local(opt.K2);
    for (std::size_t s = 0; s < opt.n_mc; ++s) {
      if (coef[s] == 0.0) continue;
      const std::uint32_t* y1 = firsts.data() + s * L1;
      for (std::size_t i = 0; i < opt.K2; ++i) sub[i] = s2[y1[i]];
      std::fill(local.begin(), local.end(), 0.0);
      pl::add_grad_log_prob<std::uint32_t>(sub, std::span<const std::uint32_t>(displays.data() + s * K, K), coef[s],
                                           std::span<double>(local));
      for (std::size_t i = 0; i < opt.K2; ++i) out.score_grad[y1[i]] += local[i];
    }
  } else {
    CatalogPLGradient acc(s1);
    for (std::size_t s = 0; s < opt.n_mc; ++s)
      if (coef[s] != 0.0) acc.add(std::span<const std::uint32_t>(firsts.data() + s * L1, L1), coef[s]);
    acc.finish(out.score_grad);
  }
  for (double& x : out.score_grad) x /= n_mc;
  return out;
}

// Exact counterpart of query_score_gradient by enumerating every ranking.
// Small catalogs only.
inline QueryGradient query_score_gradient_exact(GradientTarget target, const PLPolicy& first, const PLPolicy* second,
                                                UserId query, std::span<const ItemId> target_items,
                                                std::span<const double> target_weights, const GradientOptions& opt) {
  const std::size_t n = first.model.n_items();
  const bool two_stage = target != GradientTarget::kSingleStage;
  if (two_stage && second == nullptr) throw ArgumentError("two-stage gradient needs both policies");
  if (n > pl::kMaxEnumerationSupport)
    throw GuardError("exact gradients need n_items <= " + std::to_string(pl::kMaxEnumerationSupport));
  const std::size_t K = opt.K;
  std::vector<double> w(n, 0.0);
  for (std::size_t t = 0; t < target_items.size(); ++t) w.at(static_cast<std::size_t>(target_items[t])) += target_weights[t];
  std::vector<double> s1;
  scores_all(first, query, s1);
  QueryGradient out;
  out.score_grad.assign(n, 0.0);
  out.score_grad_se.assign(n, 0.0);
  if (!two_stage) {
    if (K > n) throw ArgumentError("display length exceeds catalog size");
    for (const auto& y : pl::enumerate(s1, K)) {
      double f = 0.0;
      for (std::size_t j = 0; j < K; ++j) f += w[y.order[j]] * opt.exam.prob(j + 1);
      out.value += y.probability * f;
      pl::add_grad_log_prob<std::uint32_t>(s1, y.order, y.probability * f, std::span<double>(out.score_grad));
    }
    return out;
  }
  check_list_sizes(opt.K2, K, n);
  std::vector<double> s2, sub(opt.K2), local(opt.K2);
  scores_all(*second, query, s2);
  for (const auto& yc : pl::enumerate(s1, opt.K2)) {
    for (std::size_t i = 0; i < opt.K2; ++i) sub[i] = s2[yc.order[i]];
    for (const auto& yr : pl::enumerate(sub, K)) {
      double f = 0.0;
      for (std::size_t j = 0; j < K; ++j) f += w[yc.order[yr.order[j]]] * opt.exam.prob(j + 1);
      const double pf = yc.probability * yr.probability * f;
      out.value += pf;
      if (target == GradientTarget::kCandidate) {
        pl::add_grad_log_prob<std::uint32_t>(s1, yc.order, pf, std::span<double>(out.score_grad));
      } else {
        std::fill(local.begin(), local.end(), 0.0);
        pl::add_grad_log_prob<std::uint32_t>(sub, yr.order, pf, std::span<double>(local));
        for (std::size_t i = 0; i < opt.K2; ++i) out.score_grad[yc.order[i]] += local[i];
      }
    }
  }
  return out;
}

inline GradientOptions gradient_options(const TrainConfig& config) {
  GradientOptions o;
  o.K2 = config.K2;
  o.K = config.K;
  o.n_mc = config.n_mc;
  o.control_variate = config.control_variate;
  return o;
}

struct BatchGradient {
  GradAccumulator grads;
  double value_sum = 0.0;  // sum over queries of the MC objective value
};

// Gradient of (1 / #records) sum_q sum_d W_q(d) rho(d | q) over a batch of
// query targets for the policy selected by `target`. Per-query work runs in
// parallel and is reduced in batch order.
inline BatchGradient batch_gradient(GradientTarget target, const PLPolicy& first, const PLPolicy* second,
                                    std::span<const QueryTarget* const> batch, const GradientOptions& opt,
                                    std::uint64_t seed, std::size_t workers) {
  const PLPolicy& trained = target == GradientTarget::kReranker ? *second : first;
  BatchGradient out{GradAccumulator(trained.model), 0.0};
  std::vector<QueryGradient> parts(batch.size());
  parallel_for(batch.size(), workers, [&](std::size_t i) {
    const QueryTarget& t = *batch[i];
    if (t.items.empty()) return;
    Rng rng = child_stream(seed, {static_cast<std::uint64_t>(t.query)});
    parts[i] = query_score_gradient(target, first, second, t.query, t.items, t.weights, opt, rng);
  });
  std::size_t records = 0;
  for (const QueryTarget* t : batch) records += t->n_records;
  const double scale = records ? 1.0 / static_cast<double>(records) : 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (parts[i].score_grad.empty()) continue;
    out.grads.add_score_gradient(trained, batch[i]->query, parts[i].score_grad, scale);
    out.value_sum += parts[i].value;
  }
  return out;
}

inline std::vector<const QueryTarget*> click_bearing(const TargetSet& set) {
  std::vector<const QueryTarget*> out;
  for (const auto& q : set.queries)
    if (!q.items.empty()) out.push_back(&q);
  return out;
}

// Batch gradient straight from click records: groups records by query and
// weighs each click by 1 / rho_0.
inline GradAccumulator grad_candidate_batch(const PLPolicy& candidate, const PLPolicy& reranker,
                                            std::span<const ClickRecord> batch, const PropensityTable& rho0,
                                            const TrainConfig& config, std::uint64_t seed) {
  if (batch.empty()) throw ArgumentError("empty batch");
  const TargetSet set = targets_from_records(batch, rho0);
  std::vector<const QueryTarget*> ptrs;
  for (const auto& q : set.queries) ptrs.push_back(&q);
  return batch_gradient(GradientTarget::kCandidate, candidate, &reranker, ptrs, gradient_options(config), seed,
                        config.workers)
      .grads;
}

inline GradAccumulator grad_reranker_batch(const PLPolicy& candidate, const PLPolicy& reranker,
                                           std::span<const ClickRecord> batch, const PropensityTable& rho0,
                                           const TrainConfig& config, std::uint64_t seed) {
  if (batch.empty()) throw ArgumentError("empty batch");
  const TargetSet set = targets_from_records(batch, rho0);
  std::vector<const QueryTarget*> ptrs;
  for (const auto& q : set.queries) ptrs.push_back(&q);
  return batch_gradient(GradientTarget::kReranker, candidate, &reranker, ptrs, gradient_options(config), seed,
                        config.workers)
      .grads;
}

// Objective value (1 / #records) sum_q sum_d W_q(d) rho(d | q), estimated
// with `n_mc` samples per query from streams fixed by `seed`.
inline double target_value(GradientTarget kind, const PLPolicy& first, const PLPolicy* second, const TargetSet& set,
                           std::size_t K2, std::size_t K, std::size_t n_mc, const ExaminationModel& exam,
                           std::uint64_t seed, std::size_t workers) {
  if (set.n_records == 0) return 0.0;
  std::vector<double> parts(set.queries.size(), 0.0);
  parallel_for(set.queries.size(), workers, [&](std::size_t i) {
    const QueryTarget& t = set.queries[i];
    if (t.items.empty()) return;
    Rng rng = child_stream(seed, {static_cast<std::uint64_t>(t.query)});
    std::vector<double> w(first.model.n_items(), 0.0);
    for (std::size_t j = 0; j < t.items.size(); ++j) w[t.items[j]] += t.weights[j];
    double acc = 0.0;
    if (kind == GradientTarget::kSingleStage) {
      std::vector<double> s;
      scores_all(first, t.query, s);
      pl::TreeSampler sampler(s);
      std::vector<std::uint32_t> y;
      for (std::size_t m = 0; m < n_mc; ++m) {
        sampler.sample(K, rng, y);
        for (std::size_t j = 0; j < K; ++j) acc += w[y[j]] * exam.prob(j + 1);
      }
    } else {
      TwoStageSampler sampler(first, *second, t.query, K2, K);
      TwoStageDraw draw;
      for (std::size_t m = 0; m < n_mc; ++m) {
        sampler.draw(rng, draw);
        for (std::size_t j = 0; j < K; ++j) acc += w[draw.displayed_item(j)] * exam.prob(j + 1);
      }
    }
    parts[i] = acc / static_cast<double>(n_mc);
  });
  return tree_sum(parts) / static_cast<double>(set.n_records);
}

struct HistoryRow {
  std::size_t epoch = 0;
  std::string regime;
  std::string stage;
  double u_train = 0.0;
  double u_validation = 0.0;
  double ndcg10 = std::numeric_limits<double>::quiet_NaN();
  double seconds = 0.0;
};

inline void write_history_csv(std::ostream& out, std::span<const HistoryRow> rows, bool header = true) {
  if (header) out << "epoch,regime,stage,u_train,u_validation,ndcg10,seconds\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%zu,%s,%s,%.10g,%.10g,%.10g,%.3f\n", r.epoch, r.regime.c_str(), r.stage.c_str(),
                  r.u_train, r.u_validation, r.ndcg10, r.seconds);
    out << buf;
  }
}

// Optional per-epoch NDCG probe: (candidate, reranker) -> NDCG@10.
using EvalHook = std::function<double(const PLPolicy&, const PLPolicy&)>;

struct TrainResult {
  PLPolicy candidate;
  PLPolicy reranker;
  std::vector<HistoryRow> history;
  std::size_t candidate_updates = 0;
  std::size_t reranker_updates = 0;
};

// Train/validation record split, seeded.
struct LogSplit {
  TargetSet train;
  TargetSet validation;
};

inline LogSplit split_log(const ClickLog& log, const PropensityTable& rho0, double validation_frac, std::uint64_t seed) {
  std::vector<std::size_t> idx(log.size());
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(derive_seed(seed, {0x5a1}));
  std::shuffle(idx.begin(), idx.end(), rng);
  const std::size_t n_val = rounded_count(validation_frac, log.size());
  std::vector<ClickRecord> val, train;
  for (std::size_t i = 0; i < idx.size(); ++i) (i < n_val ? val : train).push_back(log.records[idx[i]]);
  return {targets_from_records(train, rho0), targets_from_records(val, rho0)};
}

namespace detail {

struct StageRun {
  GradientTarget target;
  PLPolicy* trained;
  OptimizerState* state;
};

inline double now_seconds(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Shared epoch loop. Each minibatch updates the stage chosen by `pick`
// (global batch index -> stage slot). Early stopping keeps the parameters of
// the best validation epoch.
inline void run_epochs(const std::vector<StageRun>& stages,
                       const std::function<std::size_t(std::size_t)>& pick, PLPolicy& first, PLPolicy* second,
                       const LogSplit& data, const TrainConfig& config, std::size_t max_epochs,
                       const std::string& regime, const std::string& stage_label, GradientTarget value_kind,
                       std::uint64_t seed, const EvalHook& eval, TrainResult& result,
                       std::vector<std::size_t>& update_counts) {
  const auto t0 = std::chrono::steady_clock::now();
  const GradientOptions opt = gradient_options(config);
  const ExaminationModel exam = opt.exam;
  auto batches_of = click_bearing(data.train);
  const bool has_val = data.validation.n_records > 0 && !click_bearing(data.validation).empty();
  std::optional<PLPolicy> best_first, best_second;
  double best_val = -std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;
  std::size_t global_batch = 0;
  update_counts.assign(stages.size(), 0);
  if (batches_of.empty()) return;
  for (std::size_t epoch = 1; epoch <= max_epochs; ++epoch) {
    Rng shuffle_rng = child_stream(seed, {0xe90c, epoch});
    std::shuffle(batches_of.begin(), batches_of.end(), shuffle_rng);
    double train_value = 0.0;
    for (std::size_t start = 0; start < batches_of.size(); start += config.batch_size, ++global_batch) {
      const std::size_t end = std::min(batches_of.size(), start + config.batch_size);
      const std::span<const QueryTarget* const> batch(batches_of.data() + start, end - start);
      const std::size_t slot = pick(global_batch);
      const StageRun& st = stages[slot];
      BatchGradient g = batch_gradient(st.target, first, second, batch, opt,
                                       derive_seed(seed, {0xba7c, global_batch}), config.workers);
      train_value += g.value_sum;
      optimizer_step(*st.state, st.trained->model, g.grads);
      ++update_counts[slot];
    }
    HistoryRow row;
    row.epoch = epoch;
    row.regime = regime;
    row.stage = stage_label;
    row.u_train = train_value / static_cast<double>(std::max<std::size_t>(1, data.train.n_records));
    row.u_validation = has_val ? target_value(value_kind, first, second, data.validation, config.K2, config.K,
                                              config.validation_mc, exam, derive_seed(seed, {0x7a1}), config.workers)
                               : row.u_train;
    if (eval) row.ndcg10 = eval(first, second ? *second : first);
    row.seconds = now_seconds(t0);
    result.history.push_back(row);
    if (row.u_validation > best_val) {
      best_val = row.u_validation;
      best_first = first;
      if (second) best_second = *second;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      break;
    }
  }
  if (best_first) first = *best_first;
  if (second && best_second) *second = *best_second;
}

}  // namespace detail

// Single-stage training of one PL policy over the whole catalog (display = its
// top K) on arbitrary query targets.
inline PLPolicy train_single_stage(PLPolicy policy, const LogSplit& data, const TrainConfig& config,
                                   std::size_t max_epochs, const std::string& regime, const std::string& stage,
                                   std::uint64_t seed, TrainResult& result, std::size_t* updates = nullptr) {
  config.validate();
  OptimizerState state(policy.model, config.learning_rate, config.beta1, config.beta2, config.adam_epsilon);
  std::vector<std::size_t> counts;
  detail::run_epochs({{GradientTarget::kSingleStage, &policy, &state}}, [](std::size_t) { return 0; }, policy,
                     nullptr, data, config, max_epochs, regime, stage, GradientTarget::kSingleStage, seed, {}, result,
                     counts);
  if (updates) *updates = counts.empty() ? 0 : counts[0];
  return policy;
}

// Single-stage IPS pre-training of a re-ranker over the full catalog.
inline PLPolicy pretrain_reranker(const ClickLog& log, const PropensityTable& rho0, const FactorModel& init,
                                  const TrainConfig& config, std::uint64_t seed) {
  if (log.empty()) throw ArgumentError("pretrain_reranker needs a nonempty log");
  const LogSplit data = split_log(log, rho0, config.validation_frac, derive_seed(seed, {0x9e1}));
  TrainResult scratch;
  return train_single_stage(PLPolicy(init, config.temperature), data, config, config.pretrain_epochs, "baseline",
                            "reranker-pretrain", derive_seed(seed, {0x9e2}), scratch);
}

// Production logging model: single-stage REINFORCE on true labels of the
// logging users for a fixed number of epochs.
inline FactorModel train_logging_model(const FactorModel& init, const RelevanceMatrix& rel,
                                       std::span<const UserId> logging_users, const TrainConfig& config,
                                       std::size_t epochs, std::uint64_t seed) {
  LogSplit data;
  data.train = targets_from_relevance(rel, logging_users);
  TrainConfig c = config;
  c.patience = std::numeric_limits<std::size_t>::max();
  TrainResult scratch;
  PLPolicy p = train_single_stage(PLPolicy(init, 1.0), data, c, epochs, "logging", "logging", seed, scratch);
  return p.model;
}

struct TrainInputs {
  const ClickLog* log = nullptr;
  const PropensityTable* rho0 = nullptr;
  const FactorModel* init_candidate = nullptr;
  const FactorModel* init_reranker = nullptr;
  // Needed only when the Baseline pre-trains through the logging candidate.
  const PLPolicy* logging_candidate = nullptr;
  EvalHook eval;
};

inline TrainResult train(const TrainInputs& in, const TrainConfig& config) {
  config.validate();
  if (!in.log || !in.rho0 || !in.init_candidate || !in.init_reranker) throw ArgumentError("train: missing inputs");
  const std::uint64_t seed = config.seed;
  const LogSplit data = split_log(*in.log, *in.rho0, config.validation_frac, derive_seed(seed, {0x5911}));
  const std::string name = regime_name(config.regime);
  TrainResult result;
  result.candidate = PLPolicy(*in.init_candidate, config.temperature);
  result.reranker = PLPolicy(*in.init_reranker, config.temperature);

  switch (config.regime) {
    case Regime::kJoint: {
      OptimizerState sc(result.candidate.model, config.learning_rate, config.beta1, config.beta2, config.adam_epsilon);
      OptimizerState sr(result.reranker.model, config.learning_rate, config.beta1, config.beta2, config.adam_epsilon);
      std::vector<std::size_t> counts;
      detail::run_epochs({{GradientTarget::kCandidate, &result.candidate, &sc},
                          {GradientTarget::kReranker, &result.reranker, &sr}},
                         [](std::size_t b) { return b % 2; }, result.candidate, &result.reranker, data, config,
                         config.max_epochs, name, "alternating", GradientTarget::kCandidate,
                         derive_seed(seed, {0x101}), in.eval, result, counts);
      if (!counts.empty()) {
        result.candidate_updates = counts[0];
        result.reranker_updates = counts[1];
      }
      break;
    }
    case Regime::kBaseline: {
      if (config.pretrain_through_logging_candidate) {
        if (!in.logging_candidate) throw ArgumentError("baseline pre-training needs the logging candidate policy");
        PLPolicy cand = *in.logging_candidate;
        OptimizerState sr(result.reranker.model, config.learning_rate, config.beta1, config.beta2, config.adam_epsilon);
        std::vector<std::size_t> counts;
        detail::run_epochs({{GradientTarget::kReranker, &result.reranker, &sr}}, [](std::size_t) { return 0; }, cand,
                           &result.reranker, data, config, config.pretrain_epochs, name, "reranker-pretrain",
                           GradientTarget::kCandidate, derive_seed(seed, {0x102}), {}, result, counts);
        result.reranker_updates = counts.empty() ? 0 : counts[0];
      } else {
        result.reranker = train_single_stage(result.reranker, data, config, config.pretrain_epochs, name,
                                             "reranker-pretrain", derive_seed(seed, {0x103}), result,
                                             &result.reranker_updates);
      }
      OptimizerState sc(result.candidate.model, config.learning_rate, config.beta1, config.beta2, config.adam_epsilon);
      std::vector<std::size_t> counts;
      detail::run_epochs({{GradientTarget::kCandidate, &result.candidate, &sc}}, [](std::size_t) { return 0; },
                         result.candidate, &result.reranker, data, config, config.max_epochs, name, "candidate",
                         GradientTarget::kCandidate, derive_seed(seed, {0x104}), in.eval, result, counts);
      result.candidate_updates = counts.empty() ? 0 : counts[0];
      break;
    }
    case Regime::kIndependent: {
      result.candidate = train_single_stage(result.candidate, data, config, config.max_epochs, name, "candidate",
                                            derive_seed(seed, {0x105}), result, &result.candidate_updates);
      result.reranker = train_single_stage(result.reranker, data, config, config.max_epochs, name, "reranker",
                                           derive_seed(seed, {0x106}), result, &result.reranker_updates);
      if (in.eval && !result.history.empty()) result.history.back().ndcg10 = in.eval(result.candidate, result.reranker);
      break;
    }
  }
  return result;
}

}  // namespace tscltr

#endif  // TSCLTR_TRAINER_HPP_
