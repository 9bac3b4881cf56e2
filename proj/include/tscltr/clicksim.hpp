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

#ifndef TSCLTR_CLICKSIM_HPP_
#define TSCLTR_CLICKSIM_HPP_

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "json.hpp"
#include "tscltr/common.hpp"
#include "tscltr/dataset.hpp"
#include "tscltr/pipeline.hpp"
#include "tscltr/policy.hpp"

namespace tscltr {

struct ClickRecord {
  UserId query = 0;
  Ranking displayed;
  std::vector<std::uint8_t> clicks;

  bool operator==(const ClickRecord&) const = default;
};

struct ClickLog {
  std::vector<ClickRecord> records;

  std::size_t size() const { return records.size(); }
  bool empty() const { return records.empty(); }
  std::size_t total_clicks() const {
    std::size_t n = 0;
    for (const auto& r : records) n += static_cast<std::size_t>(std::count(r.clicks.begin(), r.clicks.end(), 1));
    return n;
  }
  bool operator==(const ClickLog&) const = default;
};

// The production pipeline that generated the log: pi_c followed by pi_r.
struct TwoStageLoggingPolicy {
  PLPolicy candidate;
  PLPolicy reranker;
  std::size_t K2 = 0;
  std::size_t K = 0;

  void validate() const { check_list_sizes(K2, K, candidate.model.n_items()); }
};

inline std::uint64_t query_item_key(UserId q, ItemId d) {
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(q)) << 32) | static_cast<std::uint32_t>(d);
}

// Frequency estimates of the logging exposure rho_0(q, d), clipped below.
class PropensityTable {
 public:
  explicit PropensityTable(double floor = 1e-3) : floor_(floor) {
    if (!(floor > 0.0) || floor > 1.0) throw ConfigError("propensity floor must lie in (0, 1]");
  }

  double floor() const { return floor_; }

  void set(UserId q, ItemId d, double rho) { rho0_[query_item_key(q, d)] = std::clamp(rho, floor_, 1.0); }
  bool contains(UserId q, ItemId d) const { return rho0_.count(query_item_key(q, d)) != 0; }

  // Stored estimate, falling back to the floor for unseen pairs.
  double get(UserId q, ItemId d) const {
    auto it = rho0_.find(query_item_key(q, d));
    return it == rho0_.end() ? floor_ : it->second;
  }
  // Stored estimate; a missing pair is a data-integrity failure.
  double require(UserId q, ItemId d) const {
    auto it = rho0_.find(query_item_key(q, d));
    if (it == rho0_.end())
      throw IntegrityError("no propensity for clicked pair (q=" + std::to_string(q) + ", d=" + std::to_string(d) + ")");
    return it->second;
  }

  void set_impressions(UserId q, std::size_t n) { impressions_[q] = n; }
  std::size_t impressions(UserId q) const {
    auto it = impressions_.find(q);
    return it == impressions_.end() ? 0 : it->second;
  }
  std::size_t size() const { return rho0_.size(); }

  // Every stored value multiplied by `factor` (clipped to [floor, 1] again).
  PropensityTable scaled(double factor) const {
    PropensityTable out(floor_);
    out.impressions_ = impressions_;
    for (auto [k, v] : rho0_) out.rho0_[k] = std::clamp(v * factor, floor_, 1.0);
    return out;
  }

  template <typename Fn>
  void for_each(Fn&& fn) const {
    std::vector<std::pair<std::uint64_t, double>> sorted(rho0_.begin(), rho0_.end());
    std::sort(sorted.begin(), sorted.end());
    for (auto [k, v] : sorted)
      fn(static_cast<UserId>(static_cast<std::uint32_t>(k >> 32)), static_cast<ItemId>(static_cast<std::uint32_t>(k)), v);
  }

 private:
  double floor_;
  std::unordered_map<std::uint64_t, double> rho0_;
  std::unordered_map<UserId, std::size_t> impressions_;
};

// Draws N records: a uniform query from `users`, a two-stage ranking from the
// logging pipeline, and per-slot clicks ~ Bernoulli(P(E | k) * R(q, d)).
// Record i uses its own stream derived from (seed, i), so a log of N records
// is a prefix of any longer log with the same seed.
inline ClickLog simulate_log(const TwoStageLoggingPolicy& logging, const RelevanceMatrix& rel,
                             std::span<const UserId> users, std::size_t N, const ExaminationModel& exam,
                             std::uint64_t seed, std::size_t workers = 1) {
  if (users.empty()) throw ArgumentError("simulate_log needs a nonempty user set");
  if (N == 0) throw ArgumentError("simulate_log needs N >= 1");
  logging.validate();
  std::vector<std::uint32_t> user_of(N);
  for (std::size_t i = 0; i < N; ++i) {
    Rng rng = child_stream(seed, {0xc11c, i});
    user_of[i] = static_cast<std::uint32_t>(std::uniform_int_distribution<std::size_t>(0, users.size() - 1)(rng));
  }
  std::vector<std::vector<std::size_t>> records_of(users.size());
  for (std::size_t i = 0; i < N; ++i) records_of[user_of[i]].push_back(i);

  ClickLog log;
  log.records.resize(N);
  parallel_for(users.size(), workers, [&](std::size_t ui) {
    if (records_of[ui].empty()) return;
    const UserId q = users[ui];
    TwoStageSampler sampler(logging.candidate, logging.reranker, q, logging.K2, logging.K);
    TwoStageDraw draw;
    for (std::size_t i : records_of[ui]) {
      Rng rng = child_stream(seed, {0xd1a7, i});
      sampler.draw(rng, draw);
      std::vector<ItemId> shown(logging.K);
      std::vector<std::uint8_t> clicks(logging.K, 0);
      for (std::size_t j = 0; j < logging.K; ++j) {
        shown[j] = draw.displayed_item(j);
        const double p = exam.prob(j + 1) * rel.rel(q, shown[j]);
        if (p > 0.0 && pl::open_uniform(rng) < p) clicks[j] = 1;
      }
      log.records[i] = ClickRecord{q, Ranking(std::move(shown)), std::move(clicks)};
    }
  });
  return log;
}

inline PropensityTable estimate_propensities(const ClickLog& log, const ExaminationModel& exam, double floor) {
  if (log.empty()) throw ArgumentError("cannot estimate propensities from an empty log");
  PropensityTable table(floor);
  std::unordered_map<UserId, std::size_t> impressions;
  std::unordered_map<std::uint64_t, double> exposure;
  for (const ClickRecord& r : log.records) {
    ++impressions[r.query];
    for (std::size_t j = 0; j < r.displayed.size(); ++j)
      exposure[query_item_key(r.query, r.displayed[j])] += exam.prob(j + 1);
  }
  for (auto [q, n] : impressions) table.set_impressions(q, n);
  for (auto [key, mass] : exposure) {
    const auto q = static_cast<UserId>(static_cast<std::uint32_t>(key >> 32));
    const auto d = static_cast<ItemId>(static_cast<std::uint32_t>(key));
    table.set(q, d, mass / static_cast<double>(impressions[q]));
  }
  return table;
}

// Exact rho_0(d | q) = sum over (y_c, y_r) of P(y_c) P(y_r | y_c) P(E | k(d | y_r)).
inline std::vector<double> exact_propensities(const TwoStageLoggingPolicy& logging, UserId query,
                                              const ExaminationModel& exam = {}) {
  std::vector<double> rho(logging.candidate.model.n_items(), 0.0);
  for_each_two_stage(logging.candidate, logging.reranker, query, logging.K2, logging.K,
                     [&](const TwoStageOutcome& o) {
                       for (std::size_t j = 0; j < o.displayed.size(); ++j)
                         rho[o.displayed[j]] += o.probability * exam.prob(j + 1);
                     });
  return rho;
}

// JSON-lines: {"q": user, "y": [items], "c": [0/1]} with original ids when
// maps are supplied.
inline void write_click_log(std::ostream& out, const ClickLog& log, const IdMap* users = nullptr,
                            const IdMap* items = nullptr) {
  for (const ClickRecord& r : log.records) {
    nlohmann::json j;
    j["q"] = users ? users->original(r.query) : static_cast<std::int64_t>(r.query);
    std::vector<std::int64_t> y;
    for (ItemId d : r.displayed.items()) y.push_back(items ? items->original(d) : d);
    j["y"] = y;
    std::vector<int> c(r.clicks.begin(), r.clicks.end());
    j["c"] = c;
    out << j.dump() << '\n';
  }
}

inline ClickLog read_click_log(std::istream& in, const IdMap* users = nullptr, const IdMap* items = nullptr) {
  ClickLog log;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      ClickRecord r;
      const auto q = j.at("q").get<std::int64_t>();
      r.query = users ? users->dense(q) : static_cast<UserId>(q);
      std::vector<ItemId> y;
      for (const auto& v : j.at("y")) y.push_back(items ? items->dense(v.get<std::int64_t>()) : v.get<ItemId>());
      r.displayed = Ranking(std::move(y));
      for (const auto& v : j.at("c")) {
        const int c = v.get<int>();
        if (c != 0 && c != 1) throw ParseError("click values must be 0 or 1");
        r.clicks.push_back(static_cast<std::uint8_t>(c));
      }
      if (r.clicks.size() != r.displayed.size()) throw ParseError("click vector length differs from ranking length");
      log.records.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("click log line " + std::to_string(line_no) + ": " + e.what());
    } catch (const Error& e) {
      throw ParseError("click log line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return log;
}

inline nlohmann::json propensities_to_json(const PropensityTable& table, const IdMap* users = nullptr,
                                           const IdMap* items = nullptr) {
  nlohmann::json j = nlohmann::json::object();
  table.for_each([&](UserId q, ItemId d, double v) {
    const std::string key = std::to_string(users ? users->original(q) : q) + ":" +
                            std::to_string(items ? items->original(d) : d);
    j[key] = v;
  });
  return j;
}

}  // namespace tscltr

#endif  // TSCLTR_CLICKSIM_HPP_
