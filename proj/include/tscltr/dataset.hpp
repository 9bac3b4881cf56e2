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

#ifndef TSCLTR_DATASET_HPP_
#define TSCLTR_DATASET_HPP_

#include <Eigen/Dense>
#include <Eigen/SparseCore>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "json.hpp"
#include "tscltr/common.hpp"

namespace tscltr {

// Dense 0-based index <-> original id, in first-seen order.
class IdMap {
 public:
  std::int32_t intern(std::int64_t original) {
    auto [it, inserted] = to_dense_.try_emplace(original, static_cast<std::int32_t>(to_original_.size()));
    if (inserted) to_original_.push_back(original);
    return it->second;
  }
  std::int64_t original(std::int32_t dense) const {
    if (dense < 0 || static_cast<std::size_t>(dense) >= to_original_.size())
      throw IndexError("dense id " + std::to_string(dense) + " out of range");
    return to_original_[dense];
  }
  std::int32_t dense(std::int64_t original) const {
    auto it = to_dense_.find(original);
    if (it == to_dense_.end()) throw IndexError("unknown original id " + std::to_string(original));
    return it->second;
  }
  bool contains(std::int64_t original) const { return to_dense_.count(original) != 0; }
  std::size_t size() const { return to_original_.size(); }
  const std::vector<std::int64_t>& originals() const { return to_original_; }

 private:
  std::vector<std::int64_t> to_original_;
  std::unordered_map<std::int64_t, std::int32_t> to_dense_;
};

struct Rating {
  UserId user;
  ItemId item;
  int rating;
  std::int64_t timestamp;
};

struct RatingsTable {
  std::vector<Rating> entries;
  IdMap users;
  IdMap items;

  std::size_t n_users() const { return users.size(); }
  std::size_t n_items() const { return items.size(); }
};

namespace detail {

inline bool parse_int64(std::string_view field, std::int64_t& out) {
  if (field.empty()) return false;
  std::size_t i = 0;
  bool neg = false;
  if (field[0] == '-') {
    neg = true;
    i = 1;
    if (field.size() == 1) return false;
  }
  std::int64_t v = 0;
  for (; i < field.size(); ++i) {
    if (field[i] < '0' || field[i] > '9') return false;
    v = v * 10 + (field[i] - '0');
  }
  out = neg ? -v : v;
  return true;
}

inline std::uint64_t pair_key(std::int64_t a, std::int64_t b) {
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) |
         static_cast<std::uint32_t>(b);
}

}  // namespace detail

// Reads `UserID::MovieID::Rating::Timestamp` lines. Blank lines are skipped.
inline RatingsTable parse_ratings(std::istream& in) {
  RatingsTable table;
  std::unordered_set<std::uint64_t> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::int64_t fields[4];
    std::size_t start = 0;
    int n = 0;
    bool ok = true;
    while (ok && n < 4) {
      const std::size_t sep = line.find("::", start);
      const std::string_view field =
          std::string_view(line).substr(start, sep == std::string::npos ? std::string::npos : sep - start);
      ok = detail::parse_int64(field, fields[n]);
      ++n;
      if (sep == std::string::npos) break;
      start = sep + 2;
      if (n == 4) ok = false;  // trailing fields
    }
    if (!ok || n != 4)
      throw ParseError("malformed ratings line " + std::to_string(line_no) + ": '" + line + "'");
    if (fields[2] < 1 || fields[2] > 5)
      throw DataError("rating out of range 1-5 on line " + std::to_string(line_no) + ": " +
                      std::to_string(fields[2]));
    if (!seen.insert(detail::pair_key(fields[0], fields[1])).second)
      throw DataError("duplicate (user, item) pair on line " + std::to_string(line_no));
    Rating r;
    r.user = table.users.intern(fields[0]);
    r.item = table.items.intern(fields[1]);
    r.rating = static_cast<int>(fields[2]);
    r.timestamp = fields[3];
    table.entries.push_back(r);
  }
  return table;
}

inline RatingsTable load_ratings(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open ratings file '" + path + "'");
  return parse_ratings(in);
}

inline void write_ratings(std::ostream& out, const RatingsTable& table) {
  for (const Rating& r : table.entries)
    out << table.users.original(r.user) << "::" << table.items.original(r.item) << "::" << r.rating
        << "::" << r.timestamp << '\n';
}

// Binary relevance stored as a per-user sorted list of relevant items.
class RelevanceMatrix {
 public:
  RelevanceMatrix() = default;
  RelevanceMatrix(std::size_t n_users, std::size_t n_items,
                  std::vector<std::pair<UserId, ItemId>> relevant_pairs)
      : n_users_(n_users), n_items_(n_items), offsets_(n_users + 1, 0) {
    for (auto [u, d] : relevant_pairs) {
      if (u < 0 || static_cast<std::size_t>(u) >= n_users || d < 0 ||
          static_cast<std::size_t>(d) >= n_items)
        throw IndexError("relevance pair out of bounds");
    }
    std::sort(relevant_pairs.begin(), relevant_pairs.end());
    relevant_pairs.erase(std::unique(relevant_pairs.begin(), relevant_pairs.end()), relevant_pairs.end());
    items_.reserve(relevant_pairs.size());
    for (auto [u, d] : relevant_pairs) {
      ++offsets_[u + 1];
      items_.push_back(d);
    }
    for (std::size_t u = 0; u < n_users; ++u) offsets_[u + 1] += offsets_[u];
  }

  std::size_t n_users() const { return n_users_; }
  std::size_t n_items() const { return n_items_; }

  int rel(UserId u, ItemId d) const {
    const auto items = relevant_items(u);
    return std::binary_search(items.begin(), items.end(), d) ? 1 : 0;
  }
  std::span<const ItemId> relevant_items(UserId u) const {
    if (u < 0 || static_cast<std::size_t>(u) >= n_users_) throw IndexError("user out of range");
    return std::span<const ItemId>(items_).subspan(offsets_[u], offsets_[u + 1] - offsets_[u]);
  }
  std::size_t count_relevant(UserId u) const { return relevant_items(u).size(); }
  std::size_t total_relevant() const { return items_.size(); }

  bool operator==(const RelevanceMatrix&) const = default;

 private:
  std::size_t n_users_ = 0;
  std::size_t n_items_ = 0;
  std::vector<std::size_t> offsets_{0};
  std::vector<ItemId> items_;
};

inline constexpr int kRelevanceThreshold = 3;

inline RelevanceMatrix binarize(const RatingsTable& ratings) {
  std::vector<std::pair<UserId, ItemId>> pairs;
  for (const Rating& r : ratings.entries)
    if (r.rating > kRelevanceThreshold) pairs.emplace_back(r.user, r.item);
  return RelevanceMatrix(ratings.n_users(), ratings.n_items(), std::move(pairs));
}

struct UserSplit {
  std::vector<UserId> logging_users;
  std::vector<UserId> interaction_users;
  std::vector<UserId> eval_users;

  bool operator==(const UserSplit&) const = default;
};

inline std::size_t rounded_count(double frac, std::size_t n) {
  return static_cast<std::size_t>(std::llround(frac * static_cast<double>(n)));
}

inline UserSplit split_users(std::size_t n_users, double eval_frac, double logging_frac,
                             std::uint64_t seed) {
  if (!(eval_frac > 0.0 && eval_frac < 1.0) || !(logging_frac > 0.0 && logging_frac < 1.0))
    throw ConfigError("split fractions must lie in (0, 1)");
  if (eval_frac + logging_frac >= 1.0)
    throw ConfigError("eval_frac + logging_frac must be < 1");
  std::vector<UserId> order(n_users);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, {0x5b117}));
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t n_eval = rounded_count(eval_frac, n_users);
  const std::size_t n_log = std::min(rounded_count(logging_frac, n_users), n_users - n_eval);
  UserSplit s;
  s.eval_users.assign(order.begin(), order.begin() + n_eval);
  s.logging_users.assign(order.begin() + n_eval, order.begin() + n_eval + n_log);
  s.interaction_users.assign(order.begin() + n_eval + n_log, order.end());
  std::sort(s.eval_users.begin(), s.eval_users.end());
  std::sort(s.logging_users.begin(), s.logging_users.end());
  std::sort(s.interaction_users.begin(), s.interaction_users.end());
  return s;
}

inline UserSplit split_users(const RelevanceMatrix& matrix, double eval_frac, double logging_frac,
                             std::uint64_t seed) {
  return split_users(matrix.n_users(), eval_frac, logging_frac, seed);
}

inline nlohmann::json split_to_json(const UserSplit& split, const IdMap& users) {
  auto originals = [&](const std::vector<UserId>& ids) {
    std::vector<std::int64_t> out;
    out.reserve(ids.size());
    for (UserId u : ids) out.push_back(users.original(u));
    return out;
  };
  return {{"logging_users", originals(split.logging_users)},
          {"interaction_users", originals(split.interaction_users)},
          {"eval_users", originals(split.eval_users)}};
}

inline UserSplit split_from_json(const nlohmann::json& j, const IdMap& users) {
  auto dense = [&](const nlohmann::json& arr) {
    std::vector<UserId> out;
    for (const auto& v : arr) out.push_back(users.dense(v.get<std::int64_t>()));
    std::sort(out.begin(), out.end());
    return out;
  };
  return {dense(j.at("logging_users")), dense(j.at("interaction_users")), dense(j.at("eval_users"))};
}

inline nlohmann::json id_maps_to_json(const RatingsTable& table) {
  return {{"users", table.users.originals()}, {"items", table.items.originals()}};
}

// User and item embedding tables; score(u, d) is their dot product.
class FactorModel {
 public:
  FactorModel() = default;
  FactorModel(std::size_t n_users, std::size_t n_items, std::size_t dim)
      : n_users_(n_users), n_items_(n_items), dim_(dim),
        user_vecs_(n_users * dim, 0.0), item_vecs_(n_items * dim, 0.0) {}

  std::size_t n_users() const { return n_users_; }
  std::size_t n_items() const { return n_items_; }
  std::size_t dim() const { return dim_; }

  std::span<double> user(UserId u) { return {user_vecs_.data() + row(u, n_users_) * dim_, dim_}; }
  std::span<const double> user(UserId u) const {
    return {user_vecs_.data() + row(u, n_users_) * dim_, dim_};
  }
  std::span<double> item(ItemId d) { return {item_vecs_.data() + row(d, n_items_) * dim_, dim_}; }
  std::span<const double> item(ItemId d) const {
    return {item_vecs_.data() + row(d, n_items_) * dim_, dim_};
  }

  double score(UserId u, ItemId d) const {
    const auto a = user(u);
    const auto b = item(d);
    double s = 0.0;
    for (std::size_t k = 0; k < dim_; ++k) s += a[k] * b[k];
    return s;
  }

  std::vector<double>& user_data() { return user_vecs_; }
  std::vector<double>& item_data() { return item_vecs_; }
  const std::vector<double>& user_data() const { return user_vecs_; }
  const std::vector<double>& item_data() const { return item_vecs_; }

  bool all_finite() const {
    auto fin = [](double x) { return std::isfinite(x); };
    return std::all_of(user_vecs_.begin(), user_vecs_.end(), fin) &&
           std::all_of(item_vecs_.begin(), item_vecs_.end(), fin);
  }

  // Order-sensitive digest of every parameter; used to assert immutability.
  std::uint64_t checksum() const {
    std::uint64_t h = splitmix64(dim_);
    auto mix = [&h](const std::vector<double>& xs) {
      for (double x : xs) {
        std::uint64_t bits;
        std::memcpy(&bits, &x, sizeof bits);
        h = splitmix64(h ^ bits);
      }
    };
    mix(user_vecs_);
    mix(item_vecs_);
    return h;
  }

  bool operator==(const FactorModel&) const = default;

 private:
  static std::size_t row(std::int32_t id, std::size_t n) {
    if (id < 0 || static_cast<std::size_t>(id) >= n)
      throw IndexError("embedding row " + std::to_string(id) + " out of range [0, " + std::to_string(n) + ")");
    return static_cast<std::size_t>(id);
  }

  std::size_t n_users_ = 0;
  std::size_t n_items_ = 0;
  std::size_t dim_ = 0;
  std::vector<double> user_vecs_;
  std::vector<double> item_vecs_;
};

enum class SvdSource { kBinary, kRatings };

namespace detail {

inline Eigen::MatrixXd orthonormal_basis(const Eigen::MatrixXd& y) {
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(y);
  return qr.householderQ() * Eigen::MatrixXd::Identity(y.rows(), y.cols());
}

// Truncated SVD A ~= U diag(s) V^T. Small problems use a dense bidiagonal
// SVD; large ones a seeded randomized subspace iteration.
inline void truncated_svd(const Eigen::SparseMatrix<double>& a, std::size_t dim, std::uint64_t seed,
                          Eigen::MatrixXd& u, Eigen::VectorXd& s, Eigen::MatrixXd& v) {
  const auto rows = a.rows();
  const auto cols = a.cols();
  const Eigen::Index k = static_cast<Eigen::Index>(dim);
  const Eigen::Index sketch = std::min<Eigen::Index>(k + std::max<Eigen::Index>(10, k / 2), std::min(rows, cols));
  if (sketch >= std::min(rows, cols) || std::min(rows, cols) <= 256) {
    Eigen::MatrixXd dense(a);
    Eigen::BDCSVD<Eigen::MatrixXd> svd(dense, Eigen::ComputeThinU | Eigen::ComputeThinV);
    u = svd.matrixU().leftCols(k);
    s = svd.singularValues().head(k);
    v = svd.matrixV().leftCols(k);
    return;
  }
  Rng rng(derive_seed(seed, {0x5fd}));
  std::normal_distribution<double> normal;
  Eigen::MatrixXd omega(cols, sketch);
  for (Eigen::Index j = 0; j < sketch; ++j)
    for (Eigen::Index i = 0; i < cols; ++i) omega(i, j) = normal(rng);
  Eigen::MatrixXd q = orthonormal_basis(a * omega);
  constexpr int kPowerIterations = 8;
  for (int it = 0; it < kPowerIterations; ++it) {
    Eigen::MatrixXd z = orthonormal_basis(a.transpose() * q);
    q = orthonormal_basis(a * z);
  }
  Eigen::MatrixXd b = (a.transpose() * q).transpose();  // sketch x cols
  Eigen::BDCSVD<Eigen::MatrixXd> svd(b, Eigen::ComputeThinU | Eigen::ComputeThinV);
  u = (q * svd.matrixU()).leftCols(k);
  s = svd.singularValues().head(k);
  v = svd.matrixV().leftCols(k);
}

}  // namespace detail

inline FactorModel svd_factor_model(const Eigen::SparseMatrix<double>& a, std::size_t dim,
                                    std::uint64_t seed) {
  const std::size_t rows = static_cast<std::size_t>(a.rows());
  const std::size_t cols = static_cast<std::size_t>(a.cols());
  if (dim == 0 || dim > std::min(rows, cols))
    throw ConfigError("svd dim " + std::to_string(dim) + " exceeds min(n_users, n_items)");
  Eigen::MatrixXd u, v;
  Eigen::VectorXd s;
  detail::truncated_svd(a, dim, seed, u, s, v);
  FactorModel model(rows, cols, dim);
  for (std::size_t k = 0; k < dim; ++k) {
    // Sign convention: the largest-magnitude entry of each item factor is positive.
    Eigen::Index arg = 0;
    v.col(k).cwiseAbs().maxCoeff(&arg);
    const double sign = v(arg, k) < 0 ? -1.0 : 1.0;
    const double root = std::sqrt(std::max(0.0, s(k)));
    for (std::size_t i = 0; i < rows; ++i) model.user(static_cast<UserId>(i))[k] = sign * u(i, k) * root;
    for (std::size_t j = 0; j < cols; ++j) model.item(static_cast<ItemId>(j))[k] = sign * v(j, k) * root;
  }
  if (!model.all_finite()) throw NumericError("svd produced non-finite factors");
  return model;
}

inline FactorModel svd_init(const RelevanceMatrix& matrix, std::size_t dim, std::uint64_t seed) {
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(matrix.total_relevant());
  for (std::size_t u = 0; u < matrix.n_users(); ++u)
    for (ItemId d : matrix.relevant_items(static_cast<UserId>(u)))
      trips.emplace_back(static_cast<int>(u), d, 1.0);
  Eigen::SparseMatrix<double> a(static_cast<Eigen::Index>(matrix.n_users()),
                                static_cast<Eigen::Index>(matrix.n_items()));
  a.setFromTriplets(trips.begin(), trips.end());
  return svd_factor_model(a, dim, seed);
}

inline FactorModel svd_init(const RatingsTable& ratings, std::size_t dim, std::uint64_t seed,
                            SvdSource source) {
  if (source == SvdSource::kBinary) return svd_init(binarize(ratings), dim, seed);
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(ratings.entries.size());
  for (const Rating& r : ratings.entries) trips.emplace_back(r.user, r.item, static_cast<double>(r.rating));
  Eigen::SparseMatrix<double> a(static_cast<Eigen::Index>(ratings.n_users()),
                                static_cast<Eigen::Index>(ratings.n_items()));
  a.setFromTriplets(trips.begin(), trips.end());
  return svd_factor_model(a, dim, seed);
}

// Keeps the `max_items` most-rated items, then a seeded random sample of at
// most `max_users` users that rated at least one kept item. Original ids are
// preserved; dense ids are reassigned.
inline RatingsTable restrict_world(const RatingsTable& full, std::size_t max_items, std::size_t max_users,
                                   std::uint64_t seed) {
  std::vector<std::size_t> item_count(full.n_items(), 0);
  for (const Rating& r : full.entries) ++item_count[r.item];
  std::vector<ItemId> items(full.n_items());
  std::iota(items.begin(), items.end(), 0);
  std::stable_sort(items.begin(), items.end(),
                   [&](ItemId a, ItemId b) { return item_count[a] > item_count[b]; });
  if (items.size() > max_items) items.resize(max_items);
  std::vector<char> keep_item(full.n_items(), 0);
  for (ItemId d : items) keep_item[d] = 1;

  std::vector<char> active(full.n_users(), 0);
  for (const Rating& r : full.entries)
    if (keep_item[r.item]) active[r.user] = 1;
  std::vector<UserId> users;
  for (std::size_t u = 0; u < full.n_users(); ++u)
    if (active[u]) users.push_back(static_cast<UserId>(u));
  if (users.size() > max_users) {
    Rng rng(derive_seed(seed, {0x7e57}));
    std::shuffle(users.begin(), users.end(), rng);
    users.resize(max_users);
    std::sort(users.begin(), users.end());
  }
  std::vector<char> keep_user(full.n_users(), 0);
  for (UserId u : users) keep_user[u] = 1;

  RatingsTable out;
  for (const Rating& r : full.entries) {
    if (!keep_user[r.user] || !keep_item[r.item]) continue;
    Rating x = r;
    x.user = out.users.intern(full.users.original(r.user));
    x.item = out.items.intern(full.items.original(r.item));
    out.entries.push_back(x);
  }
  return out;
}

// Parameters of the MovieLens-style synthetic world used when no ratings
// file is available.
struct SyntheticWorldConfig {
  std::size_t n_users = 1200;
  std::size_t n_items = 1000;
  std::size_t latent_dim = 12;
  double mean_ratings_per_user = 110.0;
  std::size_t min_ratings_per_user = 20;
  double popularity_exponent = 0.9;
  // How strongly users select items they like (MovieLens selection bias).
  double selection_affinity = 0.7;
  double rating_noise = 0.8;
  std::uint64_t seed = 1;
};

inline RatingsTable synthesize_ratings(const SyntheticWorldConfig& cfg) {
  Rng rng(derive_seed(cfg.seed, {0x5157}));
  std::normal_distribution<double> normal;
  const std::size_t dim = cfg.latent_dim;
  std::vector<double> uf(cfg.n_users * dim), vf(cfg.n_items * dim);
  for (double& x : uf) x = normal(rng);
  for (double& x : vf) x = normal(rng);
  std::vector<double> item_bias(cfg.n_items), user_bias(cfg.n_users), log_pop(cfg.n_items);
  for (std::size_t j = 0; j < cfg.n_items; ++j) {
    item_bias[j] = 0.35 * normal(rng);
    log_pop[j] = -cfg.popularity_exponent * std::log(static_cast<double>(j + 1));
  }
  for (double& b : user_bias) b = 0.3 * normal(rng);
  std::vector<std::size_t> item_perm(cfg.n_items);
  std::iota(item_perm.begin(), item_perm.end(), 0);
  std::shuffle(item_perm.begin(), item_perm.end(), rng);

  RatingsTable table;
  std::lognormal_distribution<double> activity(0.0, 0.6);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dim));
  std::vector<double> affinity(cfg.n_items), keys(cfg.n_items);
  std::vector<std::size_t> order(cfg.n_items);
  for (std::size_t u = 0; u < cfg.n_users; ++u) {
    const double act = activity(rng) / std::exp(0.18);
    std::size_t n_rated = static_cast<std::size_t>(std::llround(cfg.mean_ratings_per_user * act));
    n_rated = std::clamp<std::size_t>(n_rated, cfg.min_ratings_per_user, cfg.n_items / 2);
    for (std::size_t j = 0; j < cfg.n_items; ++j) {
      double a = 0.0;
      for (std::size_t k = 0; k < dim; ++k) a += uf[u * dim + k] * vf[j * dim + k];
      affinity[j] = a * scale;
      const double g = -std::log(-std::log(std::max(unif(rng), 1e-300)));
      keys[j] = log_pop[item_perm[j]] + cfg.selection_affinity * affinity[j] + g;
    }
    std::iota(order.begin(), order.end(), 0);
    std::partial_sort(order.begin(), order.begin() + n_rated, order.end(),
                      [&](std::size_t a, std::size_t b) { return keys[a] > keys[b]; });
    std::sort(order.begin(), order.begin() + n_rated);
    for (std::size_t t = 0; t < n_rated; ++t) {
      const std::size_t j = order[t];
      const double raw = 3.55 + 0.9 * affinity[j] + item_bias[j] + user_bias[u] + cfg.rating_noise * normal(rng);
      Rating r;
      r.user = table.users.intern(static_cast<std::int64_t>(u + 1));
      r.item = table.items.intern(static_cast<std::int64_t>(j + 1));
      r.rating = static_cast<int>(std::clamp<long long>(std::llround(raw), 1, 5));
      r.timestamp = 978300760 + static_cast<std::int64_t>(u * 1000 + t);
      table.entries.push_back(r);
    }
  }
  return table;
}

}  // namespace tscltr

#endif  // TSCLTR_DATASET_HPP_
