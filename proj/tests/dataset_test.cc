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

#include "tscltr/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>
#include <vector>

#include <gtest/gtest.h>

namespace tscltr {
namespace {

RatingsTable parse(const std::string& text) {
  std::istringstream in(text);
  return parse_ratings(in);
}

TEST(ParseRatingsTest, ReadsMovieLensFormat) {
  const RatingsTable t = parse("1::1193::5::978300760\n1::661::3::978302109\n\n2::1193::4::978298413\n");
  ASSERT_EQ(t.entries.size(), 3u);
  EXPECT_EQ(t.n_users(), 2u);
  EXPECT_EQ(t.n_items(), 2u);
  EXPECT_EQ(t.users.original(t.entries[2].user), 2);
  EXPECT_EQ(t.items.original(t.entries[2].item), 1193);
  EXPECT_EQ(t.entries[1].rating, 3);
  EXPECT_EQ(t.entries[0].timestamp, 978300760);
}

TEST(ParseRatingsTest, MalformedLineNamesLineNumber) {
  try {
    parse("1::2::3::4\n1::2::x::4\n");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
  }
  EXPECT_THROW(parse("1::2::3\n"), ParseError);
  EXPECT_THROW(parse("1::2::3::4::5\n"), ParseError);
  EXPECT_THROW(parse("1,2,3,4\n"), ParseError);
}

TEST(ParseRatingsTest, RejectsOutOfRangeAndDuplicates) {
  EXPECT_THROW(parse("1::2::6::4\n"), DataError);
  EXPECT_THROW(parse("1::2::0::4\n"), DataError);
  EXPECT_THROW(parse("1::2::3::4\n1::2::5::9\n"), DataError);
}

TEST(ParseRatingsTest, EmptyInputGivesEmptyTable) {
  const RatingsTable t = parse("");
  EXPECT_TRUE(t.entries.empty());
  EXPECT_EQ(t.n_users(), 0u);
}

TEST(ParseRatingsTest, WriteRoundTrip) {
  const std::string text = "10::5::4::1\n7::5::2::2\n10::3::5::3\n";
  const RatingsTable t = parse(text);
  std::ostringstream out;
  write_ratings(out, t);
  EXPECT_EQ(out.str(), text);
}

TEST(IdMapTest, DenseAndOriginal) {
  IdMap m;
  EXPECT_EQ(m.intern(42), 0);
  EXPECT_EQ(m.intern(7), 1);
  EXPECT_EQ(m.intern(42), 0);
  EXPECT_EQ(m.original(1), 7);
  EXPECT_EQ(m.dense(42), 0);
  EXPECT_TRUE(m.contains(7));
  EXPECT_FALSE(m.contains(8));
  EXPECT_THROW(m.dense(8), IndexError);
  EXPECT_THROW(m.original(2), IndexError);
}

TEST(BinarizeTest, KeepsRatingsAboveThree) {
  const RatingsTable t = parse("1::1::5::0\n1::2::3::0\n1::3::4::0\n2::1::1::0\n");
  const RelevanceMatrix r = binarize(t);
  EXPECT_EQ(r.total_relevant(), 2u);
  EXPECT_EQ(r.rel(0, 0), 1);
  EXPECT_EQ(r.rel(0, 1), 0);
  EXPECT_EQ(r.rel(0, 2), 1);
  EXPECT_EQ(r.count_relevant(1), 0u);
  EXPECT_THROW(r.relevant_items(2), IndexError);
}

TEST(SplitUsersTest, SizesDisjointnessAndDeterminism) {
  const UserSplit s = split_users(1000, 0.10, 0.03, 5);
  EXPECT_EQ(s.eval_users.size(), 100u);
  EXPECT_EQ(s.logging_users.size(), 30u);
  EXPECT_EQ(s.interaction_users.size(), 870u);
  std::vector<UserId> all;
  for (auto* v : {&s.eval_users, &s.logging_users, &s.interaction_users}) {
    EXPECT_TRUE(std::is_sorted(v->begin(), v->end()));
    all.insert(all.end(), v->begin(), v->end());
  }
  std::sort(all.begin(), all.end());
  for (std::size_t i = 0; i < all.size(); ++i) EXPECT_EQ(all[i], static_cast<UserId>(i));
  EXPECT_EQ(split_users(1000, 0.10, 0.03, 5), s);
  EXPECT_NE(split_users(1000, 0.10, 0.03, 6), s);
}

TEST(SplitUsersTest, RejectsBadFractions) {
  EXPECT_THROW(split_users(10, 0.0, 0.1, 1), ConfigError);
  EXPECT_THROW(split_users(10, 0.6, 0.4, 1), ConfigError);
  EXPECT_THROW(split_users(10, 0.1, 1.0, 1), ConfigError);
}

TEST(SplitUsersTest, JsonRoundTripUsesOriginalIds) {
  const RatingsTable t = parse("11::1::5::0\n12::1::5::0\n13::1::5::0\n14::1::5::0\n15::1::5::0\n");
  const UserSplit s = split_users(t.n_users(), 0.2, 0.2, 3);
  const auto j = split_to_json(s, t.users);
  for (const auto& v : j.at("eval_users")) EXPECT_GE(v.get<std::int64_t>(), 11);
  EXPECT_EQ(split_from_json(j, t.users), s);
}

TEST(FactorModelTest, ScoreIsDotProductAndBoundsChecked) {
  FactorModel m(2, 3, 2);
  m.user(1)[0] = 2.0;
  m.user(1)[1] = -1.0;
  m.item(2)[0] = 0.5;
  m.item(2)[1] = 3.0;
  EXPECT_DOUBLE_EQ(m.score(1, 2), -2.0);
  EXPECT_THROW(m.score(2, 0), IndexError);
  EXPECT_THROW(m.item(-1), IndexError);
  const auto before = m.checksum();
  m.item(0)[0] = 1e-300;
  EXPECT_NE(m.checksum(), before);
}

// One-sided Jacobi SVD: singular values of a small dense matrix, descending.
std::vector<double> jacobi_singular_values(std::vector<std::vector<double>> a) {
  const std::size_t m = a.size(), n = a[0].size();
  for (int sweep = 0; sweep < 60; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) {
        double alpha = 0, beta = 0, gamma = 0;
        for (std::size_t i = 0; i < m; ++i) {
          alpha += a[i][p] * a[i][p];
          beta += a[i][q] * a[i][q];
          gamma += a[i][p] * a[i][q];
        }
        if (gamma == 0.0) continue;
        off = std::max(off, std::abs(gamma) / std::sqrt(alpha * beta));
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = (zeta >= 0 ? 1.0 : -1.0) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t), s = c * t;
        for (std::size_t i = 0; i < m; ++i) {
          const double x = a[i][p], y = a[i][q];
          a[i][p] = c * x - s * y;
          a[i][q] = s * x + c * y;
        }
      }
    if (off < 1e-15) break;
  }
  std::vector<double> sv(n);
  for (std::size_t j = 0; j < n; ++j) {
    double s = 0;
    for (std::size_t i = 0; i < m; ++i) s += a[i][j] * a[i][j];
    sv[j] = std::sqrt(s);
  }
  std::sort(sv.rbegin(), sv.rend());
  return sv;
}

Eigen::SparseMatrix<double> to_sparse(const std::vector<std::vector<double>>& a) {
  std::vector<Eigen::Triplet<double>> t;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[i].size(); ++j)
      if (a[i][j] != 0.0) t.emplace_back(static_cast<int>(i), static_cast<int>(j), a[i][j]);
  Eigen::SparseMatrix<double> s(static_cast<Eigen::Index>(a.size()), static_cast<Eigen::Index>(a[0].size()));
  s.setFromTriplets(t.begin(), t.end());
  return s;
}

// Singular value k recovered from the factors: |user col k| * |item col k|.
double factor_singular_value(const FactorModel& f, std::size_t k) {
  double nu = 0, nv = 0;
  for (std::size_t u = 0; u < f.n_users(); ++u) nu += f.user(static_cast<UserId>(u))[k] * f.user(static_cast<UserId>(u))[k];
  for (std::size_t d = 0; d < f.n_items(); ++d) nv += f.item(static_cast<ItemId>(d))[k] * f.item(static_cast<ItemId>(d))[k];
  return std::sqrt(nu * nv);
}

TEST(SvdInitTest, SmallMatrixMatchesJacobiOracle) {
  std::mt19937_64 rng(11);
  std::bernoulli_distribution coin(0.35);
  std::vector<std::vector<double>> a(14, std::vector<double>(9));
  for (auto& row : a)
    for (double& x : row) x = coin(rng) ? 1.0 : 0.0;
  const auto sv = jacobi_singular_values(a);
  const FactorModel f = svd_factor_model(to_sparse(a), 4, 1);
  for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(factor_singular_value(f, k), sv[k], 1e-10 * sv[0]);
  // The full-rank factorization reproduces the matrix.
  const FactorModel full = svd_factor_model(to_sparse(a), 9, 1);
  for (std::size_t i = 0; i < 14; ++i)
    for (std::size_t j = 0; j < 9; ++j)
      EXPECT_NEAR(full.score(static_cast<UserId>(i), static_cast<ItemId>(j)), a[i][j], 1e-10);
}

TEST(SvdInitTest, RandomizedPathMatchesJacobiOracle) {
  std::mt19937_64 rng(12);
  std::normal_distribution<double> z;
  const std::size_t m = 300, n = 270, r = 6;
  std::vector<std::vector<double>> a(m, std::vector<double>(n, 0.0));
  std::vector<double> p(m * r), q(n * r);
  for (double& x : p) x = z(rng);
  for (double& x : q) x = z(rng);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.01 * z(rng);
      for (std::size_t k = 0; k < r; ++k) s += p[i * r + k] * q[j * r + k] * (1.0 + k);
      a[i][j] = s;
    }
  const auto sv = jacobi_singular_values(a);
  const FactorModel f = svd_factor_model(to_sparse(a), 5, 3);
  for (std::size_t k = 0; k < 5; ++k) EXPECT_NEAR(factor_singular_value(f, k), sv[k], 1e-8 * sv[0]);
}

TEST(SvdInitTest, SignConventionAndDeterminism) {
  const RatingsTable t = synthesize_ratings({.n_users = 60, .n_items = 40, .mean_ratings_per_user = 15,
                                             .min_ratings_per_user = 5, .seed = 3});
  const FactorModel a = svd_init(binarize(t), 8, 9);
  EXPECT_EQ(a, svd_init(binarize(t), 8, 9));
  for (std::size_t k = 0; k < 8; ++k) {
    double best = 0.0;
    for (std::size_t d = 0; d < a.n_items(); ++d) {
      const double v = a.item(static_cast<ItemId>(d))[k];
      if (std::abs(v) > std::abs(best)) best = v;
    }
    EXPECT_GT(best, 0.0);
  }
}

TEST(SvdInitTest, RejectsBadDimension) {
  const RatingsTable t = parse("1::1::5::0\n2::2::5::0\n");
  EXPECT_THROW(svd_init(binarize(t), 0, 1), ConfigError);
  EXPECT_THROW(svd_init(binarize(t), 3, 1), ConfigError);
}

TEST(RestrictWorldTest, KeepsMostRatedItemsAndSampledUsers) {
  const RatingsTable t = parse("1::100::5::0\n2::100::4::0\n3::100::1::0\n1::200::5::0\n2::200::2::0\n3::300::5::0\n");
  const RatingsTable r = restrict_world(t, 2, 10, 1);
  EXPECT_EQ(r.n_items(), 2u);
  EXPECT_FALSE(r.items.contains(300));
  EXPECT_EQ(r.n_users(), 3u);
  EXPECT_EQ(r.entries.size(), 5u);
  const RatingsTable s = restrict_world(t, 3, 2, 1);
  EXPECT_EQ(s.n_users(), 2u);
}

TEST(SyntheticWorldTest, ShapeAndDeterminism) {
  SyntheticWorldConfig c;
  c.n_users = 100;
  c.n_items = 80;
  c.mean_ratings_per_user = 20;
  c.min_ratings_per_user = 5;
  const RatingsTable a = synthesize_ratings(c);
  const RatingsTable b = synthesize_ratings(c);
  ASSERT_EQ(a.entries.size(), b.entries.size());
  for (std::size_t i = 0; i < a.entries.size(); ++i) {
    EXPECT_EQ(a.entries[i].rating, b.entries[i].rating);
    EXPECT_GE(a.entries[i].rating, 1);
    EXPECT_LE(a.entries[i].rating, 5);
  }
  EXPECT_EQ(a.n_users(), 100u);
  std::ostringstream out;
  write_ratings(out, a);
  std::istringstream in(out.str());
  EXPECT_EQ(parse_ratings(in).entries.size(), a.entries.size());
}

}  // namespace
}  // namespace tscltr
