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

#ifndef TSCLTR_POLICY_HPP_
#define TSCLTR_POLICY_HPP_

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "tscltr/common.hpp"
#include "tscltr/dataset.hpp"

namespace tscltr {

// An ordered list of distinct items. Ranks are 1-based.
class Ranking {
 public:
  static constexpr std::size_t kNotRanked = std::numeric_limits<std::size_t>::max();

  Ranking() = default;
  explicit Ranking(std::vector<ItemId> items) : items_(std::move(items)) {
    std::vector<ItemId> sorted = items_;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
      throw ArgumentError("ranking contains duplicate items");
  }

  std::size_t size() const { return items_.size(); }
  bool empty() const { return items_.empty(); }
  ItemId operator[](std::size_t pos) const { return items_[pos]; }
  std::span<const ItemId> items() const { return items_; }

  // 1-based position of `d`, or kNotRanked.
  std::size_t rank_of(ItemId d) const {
    for (std::size_t j = 0; j < items_.size(); ++j)
      if (items_[j] == d) return j + 1;
    return kNotRanked;
  }
  bool contains(ItemId d) const { return rank_of(d) != kNotRanked; }

  bool operator==(const Ranking&) const = default;
  auto operator<=>(const Ranking&) const = default;

 private:
  std::vector<ItemId> items_;
};

// Plackett-Luce policy over factor-model scores divided by a temperature.
struct PLPolicy {
  FactorModel model;
  double temperature = 1.0;

  PLPolicy() = default;
  explicit PLPolicy(FactorModel m, double t = 1.0) : model(std::move(m)), temperature(t) {
    if (!(t > 0.0) || !std::isfinite(t)) throw ConfigError("policy temperature must be positive");
  }
};

inline std::vector<ItemId> all_items(std::size_t n_items) {
  std::vector<ItemId> out(n_items);
  std::iota(out.begin(), out.end(), 0);
  return out;
}

inline std::vector<double> scores(const PLPolicy& policy, UserId query, std::span<const ItemId> support) {
  const auto u = policy.model.user(query);
  const double inv_t = 1.0 / policy.temperature;
  const std::size_t dim = policy.model.dim();
  std::vector<double> out(support.size());
  for (std::size_t i = 0; i < support.size(); ++i) {
    const auto v = policy.model.item(support[i]);
    double s = 0.0;
    for (std::size_t k = 0; k < dim; ++k) s += u[k] * v[k];
    out[i] = s * inv_t;
  }
  return out;
}

// Scores over the full catalog, written into `out` (resized as needed).
inline void scores_all(const PLPolicy& policy, UserId query, std::vector<double>& out) {
  const auto u = policy.model.user(query);
  const std::size_t n = policy.model.n_items();
  const std::size_t dim = policy.model.dim();
  const double inv_t = 1.0 / policy.temperature;
  const double* items = policy.model.item_data().data();
  out.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    const double* v = items + i * dim;
    for (std::size_t k = 0; k < dim; ++k) s += u[k] * v[k];
    out[i] = s * inv_t;
  }
}

namespace pl {

// Uniform on the open interval (0, 1).
inline double open_uniform(Rng& rng) {
  return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
}

inline double standard_gumbel(Rng& rng) { return -std::log(-std::log(open_uniform(rng))); }

// Reusable buffers for repeated sampling from one score vector.
struct SampleWorkspace {
  std::vector<double> keys;
  std::vector<std::uint32_t> index;
};

// Top-L sample without replacement by the Gumbel-top-L construction: perturb
// every score with independent standard Gumbel noise and keep the L largest in
// decreasing key order. `out` receives indices into `scores`.
inline void sample_topk(std::span<const double> scores, std::size_t L, Rng& rng, SampleWorkspace& ws,
                        std::vector<std::uint32_t>& out) {
  const std::size_t n = scores.size();
  if (L > n) throw ArgumentError("cannot sample " + std::to_string(L) + " items from a support of " + std::to_string(n));
  ws.keys.resize(n);
  ws.index.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    ws.keys[i] = scores[i] + standard_gumbel(rng);
    ws.index[i] = static_cast<std::uint32_t>(i);
  }
  const auto by_key = [&](std::uint32_t a, std::uint32_t b) { return ws.keys[a] > ws.keys[b]; };
  if (L < n) std::nth_element(ws.index.begin(), ws.index.begin() + L, ws.index.end(), by_key);
  std::sort(ws.index.begin(), ws.index.begin() + L, by_key);
  out.assign(ws.index.begin(), ws.index.begin() + L);
}

inline std::vector<std::uint32_t> sample_topk(std::span<const double> scores, std::size_t L, Rng& rng) {
  SampleWorkspace ws;
  std::vector<std::uint32_t> out;
  sample_topk(scores, L, rng, ws, out);
  return out;
}

// Sequential Plackett-Luce sampler over a fixed score vector: a binary
// sum-tree of exp(s_i - max s) supports drawing L items without replacement
// in O(L log n) after O(n) setup. Parents are always recomputed from their
// children, so restoring the drawn leaves restores the tree bit-for-bit.
class TreeSampler {
 public:
  TreeSampler() = default;
  explicit TreeSampler(std::span<const double> scores) { reset(scores); }

  void reset(std::span<const double> scores) {
    n_ = scores.size();
    scores_.assign(scores.begin(), scores.end());
    double m = kNegInf;
    for (double s : scores) m = std::max(m, s);
    cap_ = 1;
    while (cap_ < n_) cap_ <<= 1;
    tree_.assign(2 * cap_, 0.0);
    for (std::size_t i = 0; i < n_; ++i) tree_[cap_ + i] = std::exp(scores[i] - m);
    for (std::size_t i = cap_; i-- > 1;) tree_[i] = tree_[2 * i] + tree_[2 * i + 1];
  }

  std::size_t size() const { return n_; }

  void sample(std::size_t L, Rng& rng, std::vector<std::uint32_t>& out) {
    if (L > n_) throw ArgumentError("cannot sample " + std::to_string(L) + " items from a support of " + std::to_string(n_));
    out.clear();
    saved_.clear();
    for (std::size_t j = 0; j < L; ++j) {
      if (!(tree_[1] > 1e-280)) {
        finish_by_gumbel(L, rng, out);
        break;
      }
      double u = open_uniform(rng) * tree_[1];
      std::size_t i = 1;
      while (i < cap_) {
        const double left = tree_[2 * i];
        if ((u < left && left > 0.0) || !(tree_[2 * i + 1] > 0.0)) {
          i = 2 * i;
        } else {
          u -= left;
          i = 2 * i + 1;
        }
      }
      out.push_back(static_cast<std::uint32_t>(i - cap_));
      saved_.push_back(tree_[i]);
      set_leaf(i, 0.0);
    }
    for (std::size_t j = saved_.size(); j-- > 0;) set_leaf(cap_ + out[j], saved_[j]);
  }

 private:
  void set_leaf(std::size_t i, double w) {
    tree_[i] = w;
    for (i >>= 1; i >= 1; i >>= 1) tree_[i] = tree_[2 * i] + tree_[2 * i + 1];
  }

  // The remaining mass underflowed; rank the rest by Gumbel keys on the raw
  // scores, which is the same conditional distribution.
  void finish_by_gumbel(std::size_t L, Rng& rng, std::vector<std::uint32_t>& out) {
    std::vector<char> used(n_, 0);
    for (auto i : out) used[i] = 1;
    std::vector<std::pair<double, std::uint32_t>> keys;
    for (std::size_t i = 0; i < n_; ++i)
      if (!used[i]) keys.emplace_back(scores_[i] + standard_gumbel(rng), static_cast<std::uint32_t>(i));
    const std::size_t need = L - out.size();
    std::partial_sort(keys.begin(), keys.begin() + need, keys.end(), std::greater<>());
    for (std::size_t j = 0; j < need; ++j) out.push_back(keys[j].second);
  }

  std::size_t n_ = 0;
  std::size_t cap_ = 1;
  std::vector<double> scores_;
  std::vector<double> tree_;
  std::vector<double> saved_;
};

// Per-position normalizers of a top-L prefix: log_z[j] is the log-sum-exp of
// the scores still available at position j, and log_prefix[j] is
// log(sum_{t <= j} exp(-log_z[t])). Everything stays in log space.
struct PrefixNormalizers {
  std::vector<double> log_z;
  std::vector<double> log_prefix;
};

template <typename Index>
inline void validate_order(std::size_t n, std::span<const Index> order, std::vector<char>& taken) {
  if (order.size() > n) throw ArgumentError("ranking longer than its support");
  taken.assign(n, 0);
  for (Index i : order) {
    if (static_cast<std::size_t>(i) >= n) throw ArgumentError("ranking item outside the support");
    if (taken[i]) throw ArgumentError("ranking contains duplicate items");
    taken[i] = 1;
  }
}

template <typename Index>
inline PrefixNormalizers prefix_normalizers(std::span<const double> scores, std::span<const Index> order,
                                            const std::vector<char>& taken) {
  const std::size_t L = order.size();
  double m = kNegInf;
  for (std::size_t i = 0; i < scores.size(); ++i)
    if (!taken[i]) m = std::max(m, scores[i]);
  double log_rest = kNegInf;
  if (m != kNegInf) {
    double acc = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i)
      if (!taken[i]) acc += std::exp(scores[i] - m);
    log_rest = m + std::log(acc);
  }
  PrefixNormalizers out;
  out.log_z.resize(L);
  out.log_prefix.resize(L);
  double suffix = kNegInf;
  for (std::size_t j = L; j-- > 0;) {
    suffix = log_add_exp(suffix, scores[order[j]]);
    out.log_z[j] = log_add_exp(log_rest, suffix);
  }
  double prefix = kNegInf;
  for (std::size_t j = 0; j < L; ++j) {
    prefix = log_add_exp(prefix, -out.log_z[j]);
    out.log_prefix[j] = prefix;
  }
  return out;
}

// log P(order) = sum_j [s_{d_j} - logsumexp(remaining_j)].
template <typename Index>
inline double log_prob(std::span<const double> scores, std::span<const Index> order) {
  std::vector<char> taken;
  validate_order(scores.size(), order, taken);
  const PrefixNormalizers z = prefix_normalizers(scores, order, taken);
  double lp = 0.0;
  for (std::size_t j = 0; j < order.size(); ++j) lp += scores[order[j]] - z.log_z[j];
  return lp;
}

// Adds weight * d log P(order) / d scores into `out`. For an item first
// unavailable after position p (p = L for unselected items) the partial is
// [selected] - exp(s_i) * sum_{j <= p} 1 / Z_j.
template <typename Index>
inline void add_grad_log_prob(std::span<const double> scores, std::span<const Index> order, double weight,
                              std::span<double> out) {
  std::vector<char> taken;
  validate_order(scores.size(), order, taken);
  if (order.empty() || weight == 0.0) return;
  const PrefixNormalizers z = prefix_normalizers(scores, order, taken);
  const double log_all = z.log_prefix.back();
  for (std::size_t i = 0; i < scores.size(); ++i)
    if (!taken[i]) out[i] -= weight * std::exp(scores[i] + log_all);
  for (std::size_t j = 0; j < order.size(); ++j) {
    const auto i = order[j];
    out[i] += weight * (1.0 - std::exp(scores[i] + z.log_prefix[j]));
  }
}

template <typename Index>
inline std::vector<double> grad_log_prob(std::span<const double> scores, std::span<const Index> order) {
  std::vector<double> out(scores.size(), 0.0);
  add_grad_log_prob(scores, order, 1.0, std::span<double>(out));
  return out;
}

struct EnumeratedOrder {
  std::vector<std::uint32_t> order;
  double probability;
};

inline constexpr std::size_t kMaxEnumerationSupport = 8;

// Every ordered L-prefix of the support with its exact probability.
inline std::vector<EnumeratedOrder> enumerate(std::span<const double> scores, std::size_t L) {
  const std::size_t n = scores.size();
  if (n > kMaxEnumerationSupport)
    throw GuardError("enumeration support " + std::to_string(n) + " exceeds " +
                     std::to_string(kMaxEnumerationSupport));
  if (L > n) throw ArgumentError("prefix length exceeds support");
  std::vector<EnumeratedOrder> out;
  std::vector<std::uint32_t> prefix;
  std::vector<char> used(n, 0);
  const auto recurse = [&](auto&& self, double log_p) -> void {
    if (prefix.size() == L) {
      out.push_back({prefix, std::exp(log_p)});
      return;
    }
    double m = kNegInf;
    for (std::size_t i = 0; i < n; ++i)
      if (!used[i]) m = std::max(m, scores[i]);
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      if (!used[i]) acc += std::exp(scores[i] - m);
    const double log_z = m + std::log(acc);
    for (std::size_t i = 0; i < n; ++i) {
      if (used[i]) continue;
      used[i] = 1;
      prefix.push_back(static_cast<std::uint32_t>(i));
      self(self, log_p + scores[i] - log_z);
      prefix.pop_back();
      used[i] = 0;
    }
  };
  recurse(recurse, 0.0);
  return out;
}

}  // namespace pl

namespace detail {

inline std::vector<std::uint32_t> support_positions(std::span<const ItemId> support, const Ranking& y) {
  std::unordered_map<ItemId, std::uint32_t> where;
  where.reserve(support.size() * 2);
  for (std::size_t i = 0; i < support.size(); ++i) where.emplace(support[i], static_cast<std::uint32_t>(i));
  std::vector<std::uint32_t> pos;
  pos.reserve(y.size());
  for (ItemId d : y.items()) {
    auto it = where.find(d);
    if (it == where.end())
      throw ArgumentError("ranked item " + std::to_string(d) + " is not in the support");
    pos.push_back(it->second);
  }
  return pos;
}

}  // namespace detail

inline Ranking sample_topk(const PLPolicy& policy, UserId query, std::span<const ItemId> support,
                           std::size_t L, Rng& rng) {
  if (L > support.size())
    throw ArgumentError("cannot sample " + std::to_string(L) + " items from a support of " +
                        std::to_string(support.size()));
  const std::vector<double> s = scores(policy, query, support);
  const auto idx = pl::sample_topk(s, L, rng);
  std::vector<ItemId> items;
  items.reserve(L);
  for (auto i : idx) items.push_back(support[i]);
  return Ranking(std::move(items));
}

inline double log_prob(const PLPolicy& policy, UserId query, std::span<const ItemId> support, const Ranking& y) {
  const auto pos = detail::support_positions(support, y);
  const std::vector<double> s = scores(policy, query, support);
  return pl::log_prob<std::uint32_t>(s, pos);
}

// Gradient of log P(y) with respect to the policy's scores and, through the
// bilinear score rule, the query's user row and the support's item rows.
struct ScoreGradient {
  UserId user = 0;
  std::size_t dim = 0;
  std::vector<ItemId> items;        // support order
  std::vector<double> score_grad;   // d log P / d score, per support item
  std::vector<double> user_grad;    // dim
  std::vector<double> item_grads;   // items.size() * dim, row-major

  std::span<const double> item_grad(std::size_t i) const {
    return std::span<const double>(item_grads).subspan(i * dim, dim);
  }
};

inline ScoreGradient chain_score_gradient(const PLPolicy& policy, UserId query, std::span<const ItemId> support,
                                          std::vector<double> score_grad) {
  ScoreGradient g;
  g.user = query;
  g.dim = policy.model.dim();
  g.items.assign(support.begin(), support.end());
  g.score_grad = std::move(score_grad);
  g.user_grad.assign(g.dim, 0.0);
  g.item_grads.assign(support.size() * g.dim, 0.0);
  const auto u = policy.model.user(query);
  const double inv_t = 1.0 / policy.temperature;
  for (std::size_t i = 0; i < support.size(); ++i) {
    const double gi = g.score_grad[i] * inv_t;
    if (gi == 0.0) continue;
    const auto v = policy.model.item(support[i]);
    for (std::size_t k = 0; k < g.dim; ++k) {
      g.user_grad[k] += gi * v[k];
      g.item_grads[i * g.dim + k] = gi * u[k];
    }
  }
  return g;
}

inline ScoreGradient grad_log_prob(const PLPolicy& policy, UserId query, std::span<const ItemId> support,
                                   const Ranking& y) {
  const auto pos = detail::support_positions(support, y);
  const std::vector<double> s = scores(policy, query, support);
  return chain_score_gradient(policy, query, support, pl::grad_log_prob<std::uint32_t>(s, pos));
}

struct WeightedRanking {
  Ranking ranking;
  double probability;
};

inline std::vector<WeightedRanking> enumerate_rankings(const PLPolicy& policy, UserId query,
                                                       std::span<const ItemId> support, std::size_t L) {
  if (support.size() > pl::kMaxEnumerationSupport)
    throw GuardError("enumeration support " + std::to_string(support.size()) + " exceeds " +
                     std::to_string(pl::kMaxEnumerationSupport));
  const std::vector<double> s = scores(policy, query, support);
  std::vector<WeightedRanking> out;
  for (auto& e : pl::enumerate(s, L)) {
    std::vector<ItemId> items;
    for (auto i : e.order) items.push_back(support[i]);
    out.push_back({Ranking(std::move(items)), e.probability});
  }
  return out;
}

// A single-user policy whose scores equal `s` exactly: one user, one latent
// dimension, user vector 1 and item vectors s_i. Handy for small worlds.
inline PLPolicy policy_from_scores(std::span<const double> s, double temperature = 1.0) {
  FactorModel m(1, s.size(), 1);
  m.user(0)[0] = 1.0;
  for (std::size_t i = 0; i < s.size(); ++i) m.item(static_cast<ItemId>(i))[0] = s[i] * temperature;
  return PLPolicy(std::move(m), temperature);
}

// Multi-user variant: row u of `s` holds user u's scores. Uses a one-hot
// user embedding so scores stay exact.
inline PLPolicy policy_from_score_table(const std::vector<std::vector<double>>& s) {
  const std::size_t n_users = s.size();
  const std::size_t n_items = n_users ? s[0].size() : 0;
  FactorModel m(n_users, n_items, n_users);
  for (std::size_t u = 0; u < n_users; ++u) {
    m.user(static_cast<UserId>(u))[u] = 1.0;
    for (std::size_t d = 0; d < n_items; ++d) m.item(static_cast<ItemId>(d))[u] = s[u][d];
  }
  return PLPolicy(std::move(m), 1.0);
}

}  // namespace tscltr

#endif  // TSCLTR_POLICY_HPP_
