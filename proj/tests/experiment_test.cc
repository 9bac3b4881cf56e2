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

#include "tscltr/experiment.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <gtest/gtest.h>

namespace tscltr {
namespace {

namespace fs = std::filesystem;

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path fresh_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("tscltr_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(d);
  return d;
}

ExperimentConfig tiny_config(const fs::path& out) {
  ExperimentConfig c;
  c.synthetic.n_users = 80;
  c.synthetic.n_items = 60;
  c.synthetic.mean_ratings_per_user = 15;
  c.synthetic.min_ratings_per_user = 5;
  c.K2_list = {10};
  c.N_list = {600, 1200};
  c.regimes = {Regime::kBaseline, Regime::kJoint};
  c.n_runs = 2;
  c.svd_dim = 6;
  c.logging_epochs = 2;
  c.eval_samples = 5;
  c.train.K = 5;
  c.train.n_mc = 10;
  c.train.validation_mc = 10;
  c.train.max_epochs = 2;
  c.train.pretrain_epochs = 2;
  c.train.batch_size = 16;
  c.output_dir = out.string();
  return c;
}

TEST(ConfigTest, JsonRoundTrip) {
  ExperimentConfig c = desk_preset();
  c.train.control_variate = true;
  c.logging_reranker_temperature = 3.5;
  c.synthetic.rating_noise = 0.5;
  c.regimes = {Regime::kJoint};
  ExperimentConfig d;
  apply_config_json(d, config_to_json(c));
  EXPECT_EQ(config_to_json(d), config_to_json(c));
}

TEST(ConfigTest, UnknownKeysAndBadValuesAreErrors) {
  ExperimentConfig c;
  EXPECT_THROW(apply_config_json(c, nlohmann::json{{"K3", 5}}), ConfigError);
  EXPECT_THROW(apply_config_json(c, nlohmann::json{{"n_runs", "many"}}), ConfigError);
  EXPECT_THROW(apply_config_json(c, nlohmann::json{{"regimes", {"best"}}}), ConfigError);
  EXPECT_THROW(apply_config_json(c, nlohmann::json::array()), ConfigError);
  EXPECT_THROW(load_config("/nonexistent/config.json", c), ConfigError);
}

TEST(ConfigTest, ScientificNotationForN) {
  ExperimentConfig c;
  apply_config_json(c, nlohmann::json::parse(R"({"N": [1e5, 3.2e5, 1e6]})"));
  EXPECT_EQ(c.N_list, (std::vector<std::size_t>{100000, 320000, 1000000}));
}

TEST(ConfigTest, ValidateRejectsInconsistentGrid) {
  ExperimentConfig c = desk_preset();
  c.train.K = 150;
  EXPECT_THROW(c.validate(), ConfigError);
  c = desk_preset();
  c.n_runs = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(PresetTest, DeskAndFullScaleGrids) {
  const ExperimentConfig p = full_preset();
  EXPECT_EQ(p.K2_list, (std::vector<std::size_t>{500, 1000, 1500}));
  EXPECT_EQ(p.N_list, (std::vector<std::size_t>{100000, 320000, 1000000}));
  EXPECT_EQ(p.n_runs, 25u);
  EXPECT_EQ(p.svd_dim, 50u);
  EXPECT_EQ(p.train.n_mc, 300u);
  EXPECT_EQ(p.train.learning_rate, 0.01);
  const ExperimentConfig d = desk_preset();
  EXPECT_EQ(d.synthetic.n_users, 1200u);
  EXPECT_EQ(d.synthetic.n_items, 1000u);
  EXPECT_EQ(d.n_runs, 5u);
}

ResultsGrid grid_with(std::vector<std::tuple<Regime, std::size_t, std::size_t, std::vector<double>>> cells) {
  ResultsGrid g;
  for (auto& [r, k2, n, vals] : cells) {
    for (std::size_t i = 0; i < vals.size(); ++i) g.cells[{r, k2, n}].runs.emplace_back(i, vals[i]);
    if (std::find(g.K2_list.begin(), g.K2_list.end(), k2) == g.K2_list.end()) g.K2_list.push_back(k2);
    if (std::find(g.N_list.begin(), g.N_list.end(), n) == g.N_list.end()) g.N_list.push_back(n);
    if (std::find(g.regimes.begin(), g.regimes.end(), r) == g.regimes.end()) g.regimes.push_back(r);
  }
  return g;
}

TEST(RenderTableTest, BoldsBestPerColumnIncludingTies) {
  const ResultsGrid g = grid_with({{Regime::kBaseline, 500, 100000, {0.4701, 0.4703}},
                                   {Regime::kIndependent, 500, 100000, {0.4698, 0.4706}},
                                   {Regime::kJoint, 500, 100000, {0.4400, 0.4402}}});
  const RenderedTable t = render_table(g);
  // 0.4702 and 0.4702 both print as 0.470: a tie, so both are bold.
  EXPECT_NE(t.text.find("**0.470 (0.000)**"), std::string::npos);
  EXPECT_EQ(t.text.find("**0.440"), std::string::npos);
  std::size_t bold = 0;
  for (std::size_t p = t.text.find("**0"); p != std::string::npos; p = t.text.find("**0", p + 1)) ++bold;
  EXPECT_EQ(bold, 2u);
  EXPECT_NE(t.text.find("K2=500"), std::string::npos);
  EXPECT_NE(t.text.find("N=100k"), std::string::npos);
  EXPECT_NE(t.csv.find("joint,500,100000,"), std::string::npos);
}

TEST(RenderTableTest, MissingCellsAndEmptyGrid) {
  ResultsGrid g = grid_with({{Regime::kJoint, 100, 25000, {0.5}}, {Regime::kBaseline, 100, 50000, {0.3, 0.5}}});
  const RenderedTable t = render_table(g);
  EXPECT_NE(t.text.find("**0.500 (0.000)**"), std::string::npos);
  EXPECT_NE(t.text.find("**0.400 (0.100)**"), std::string::npos);
  EXPECT_NE(t.text.find(" - "), std::string::npos);
  ResultsGrid empty;
  empty.K2_list = {100};
  empty.N_list = {25000};
  const RenderedTable e = render_table(empty);
  EXPECT_EQ(std::count(e.text.begin(), e.text.end(), '\n'), 2);
  EXPECT_EQ(e.csv, "regime,K2,N,mean,se,n_runs\n");
}

TEST(FormatTest, CountsAndCells) {
  EXPECT_EQ(format_count(100000), "100k");
  EXPECT_EQ(format_count(320000), "320k");
  EXPECT_EQ(format_count(1000000), "1M");
  EXPECT_EQ(format_count(999), "999");
  EXPECT_EQ(format_cell(0.5044, 0.0012), "0.504 (0.001)");
  EXPECT_EQ(format_double(0.1), "0.10000000000000001");
}

TEST(RunGridTest, WritesOutputsAndResumesFromCheckpoints) {
  const fs::path dir = fresh_dir("grid");
  const ExperimentConfig c = tiny_config(dir);
  const ResultsGrid g = run_grid(c);
  EXPECT_EQ(g.cells.size(), 4u);
  for (const auto& [k, cell] : g.cells) {
    EXPECT_TRUE(cell.failures.empty());
    EXPECT_EQ(cell.runs.size(), 2u);
    for (auto [run, v] : cell.runs) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
  const std::string csv = slurp(dir / "grid.csv");
  EXPECT_EQ(csv.rfind("regime,K2,N,run,ndcg10\n", 0), 0u);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 9);
  EXPECT_TRUE(fs::exists(dir / "table.txt"));
  EXPECT_TRUE(fs::exists(dir / "summary.csv"));
  EXPECT_TRUE(fs::exists(dir / "config.json"));
  EXPECT_FALSE(fs::exists(dir / "failures.txt"));
  EXPECT_EQ(render_table(read_grid_csv(dir / "grid.csv")).csv, slurp(dir / "summary.csv"));

  // A resumed sweep takes finished cells from their checkpoints.
  const fs::path ckpt = dir / "cells" / cell_file_name({Regime::kJoint, 10, 600}, 1, c.master_seed);
  ASSERT_TRUE(fs::exists(ckpt));
  const double original = g.cells.at({Regime::kJoint, 10, 600}).runs[1].second;
  nlohmann::json edited = nlohmann::json::parse(slurp(ckpt));
  edited["ndcg10"] = 0.123;
  std::ofstream(ckpt) << edited.dump() << '\n';
  const ResultsGrid resumed = run_grid(c);
  EXPECT_EQ(resumed.cells.at({Regime::kJoint, 10, 600}).runs[1].second, 0.123);

  // A checkpoint from another config is recomputed.
  ExperimentConfig other = c;
  other.train.learning_rate = 0.02;
  edited["config"] = result_config(other);
  std::ofstream(ckpt) << edited.dump() << '\n';
  const ResultsGrid recomputed = run_grid(c);
  EXPECT_EQ(recomputed.cells.at({Regime::kJoint, 10, 600}).runs[1].second, original);
  fs::remove_all(dir);
}

TEST(RunGridTest, SingleCellAndSeedSensitivity) {
  const fs::path dir = fresh_dir("cell");
  ExperimentConfig c = tiny_config(dir);
  c.n_runs = 1;
  GridOptions only;
  only.only = {CellKey{Regime::kJoint, 10, 1200}};
  const ResultsGrid a = run_grid(c, only);
  ASSERT_EQ(a.cells.size(), 1u);
  fs::remove_all(dir);
  const ResultsGrid b = run_grid(c, only);
  EXPECT_EQ(a.cells.begin()->second.runs, b.cells.begin()->second.runs);
  fs::remove_all(dir);
  c.master_seed += 1;
  const ResultsGrid d = run_grid(c, only);
  EXPECT_NE(a.cells.begin()->second.runs, d.cells.begin()->second.runs);
  fs::remove_all(dir);
}

TEST(RunGridTest, FailuresAreRecorded) {
  const fs::path dir = fresh_dir("fail");
  ExperimentConfig c = tiny_config(dir);
  c.n_runs = 1;
  c.K2_list = {70};  // larger than the 60-item catalog
  c.train.K = 5;
  const ResultsGrid g = run_grid(c);
  for (const auto& [k, cell] : g.cells) {
    EXPECT_TRUE(cell.runs.empty());
    EXPECT_EQ(cell.failures.size(), 1u);
  }
  EXPECT_TRUE(fs::exists(dir / "failures.txt"));
  fs::remove_all(dir);
}

}  // namespace
}  // namespace tscltr
