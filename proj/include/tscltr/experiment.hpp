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

#ifndef TSCLTR_EXPERIMENT_HPP_
#define TSCLTR_EXPERIMENT_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "json.hpp"
#include "tscltr/clicksim.hpp"
#include "tscltr/common.hpp"
#include "tscltr/dataset.hpp"
#include "tscltr/estimator.hpp"
#include "tscltr/policy.hpp"
#include "tscltr/trainer.hpp"

namespace tscltr {

struct ExperimentConfig {
  std::string dataset_path;  // empty: synthetic MovieLens-style world
  SyntheticWorldConfig synthetic;
  std::size_t max_users = 0;  // 0: keep all
  std::size_t max_items = 0;

  std::vector<std::size_t> K2_list{500, 1000, 1500};
  std::vector<std::size_t> N_list{100000};
  std::vector<Regime> regimes{Regime::kBaseline, Regime::kIndependent, Regime::kJoint};
  std::size_t n_runs = 25;
  std::uint64_t master_seed = 2024;
  std::string output_dir = "results";

  double eval_frac = 0.10;
  double logging_frac = 0.03;
  std::size_t svd_dim = 50;
  SvdSource svd_source = SvdSource::kBinary;

  std::size_t logging_epochs = 10;
  double logging_candidate_temperature = 2.0;
  double logging_reranker_temperature = 2.0;
  std::size_t eval_samples = 50;

  TrainConfig train;

  void validate() const {
    if (n_runs == 0) throw ConfigError("n_runs must be >= 1");
    if (K2_list.empty() || N_list.empty() || regimes.empty()) throw ConfigError("K2, N and regime lists must be nonempty");
    const std::size_t min_k2 = *std::min_element(K2_list.begin(), K2_list.end());
    if (train.K > min_k2) throw ConfigError("K must not exceed the smallest K2");
    if (eval_samples == 0) throw ConfigError("eval_samples must be >= 1");
    if (!(logging_candidate_temperature > 0.0) || !(logging_reranker_temperature > 0.0))
      throw ConfigError("logging temperatures must be positive");
    for (std::size_t n : N_list)
      if (n == 0) throw ConfigError("N must be >= 1");
  }
};

// Full-scale grid: K2 in {500, 1000, 1500}, N in {1e5, 3.2e5, 1e6}, 25 runs.
inline ExperimentConfig full_preset() {
  ExperimentConfig c;
  c.K2_list = {500, 1000, 1500};
  c.N_list = {100000, 320000, 1000000};
  c.n_runs = 25;
  return c;
}

// Desk-scale grid: ~1,200 users x 1,000 items, K2 in {100, 200},
// N in {25k, 50k, 100k}, 5 runs.
inline ExperimentConfig desk_preset() {
  ExperimentConfig c;
  c.max_users = 1200;
  c.max_items = 1000;
  c.synthetic.n_users = 1200;
  c.synthetic.n_items = 1000;
  c.K2_list = {100, 200};
  c.N_list = {25000, 50000, 100000};
  c.n_runs = 5;
  c.train.K2 = 100;
  return c;
}

// ---- configuration (de)serialization -------------------------------------

inline std::string svd_source_name(SvdSource s) { return s == SvdSource::kBinary ? "binary" : "ratings"; }

inline nlohmann::json config_to_json(const ExperimentConfig& c) {
  nlohmann::json j;
  j["dataset_path"] = c.dataset_path;
  j["synthetic_users"] = c.synthetic.n_users;
  j["synthetic_items"] = c.synthetic.n_items;
  j["synthetic_seed"] = c.synthetic.seed;
  j["synthetic_latent_dim"] = c.synthetic.latent_dim;
  j["synthetic_mean_ratings_per_user"] = c.synthetic.mean_ratings_per_user;
  j["synthetic_min_ratings_per_user"] = c.synthetic.min_ratings_per_user;
  j["synthetic_popularity_exponent"] = c.synthetic.popularity_exponent;
  j["synthetic_selection_affinity"] = c.synthetic.selection_affinity;
  j["synthetic_rating_noise"] = c.synthetic.rating_noise;
  j["max_users"] = c.max_users;
  j["max_items"] = c.max_items;
  j["K2"] = c.K2_list;
  j["N"] = c.N_list;
  std::vector<std::string> regimes;
  for (Regime r : c.regimes) regimes.push_back(regime_name(r));
  j["regimes"] = regimes;
  j["n_runs"] = c.n_runs;
  j["seed"] = c.master_seed;
  j["output_dir"] = c.output_dir;
  j["eval_frac"] = c.eval_frac;
  j["logging_frac"] = c.logging_frac;
  j["svd_dim"] = c.svd_dim;
  j["svd_source"] = svd_source_name(c.svd_source);
  j["logging_epochs"] = c.logging_epochs;
  j["logging_candidate_temperature"] = c.logging_candidate_temperature;
  j["logging_reranker_temperature"] = c.logging_reranker_temperature;
  j["eval_samples"] = c.eval_samples;
  j["K"] = c.train.K;
  j["n_mc"] = c.train.n_mc;
  j["batch_size"] = c.train.batch_size;
  j["max_epochs"] = c.train.max_epochs;
  j["patience"] = c.train.patience;
  j["learning_rate"] = c.train.learning_rate;
  j["validation_frac"] = c.train.validation_frac;
  j["validation_mc"] = c.train.validation_mc;
  j["pretrain_epochs"] = c.train.pretrain_epochs;
  j["pretrain_through_logging_candidate"] = c.train.pretrain_through_logging_candidate;
  j["propensity_floor"] = c.train.propensity_floor;
  j["control_variate"] = c.train.control_variate;
  j["temperature"] = c.train.temperature;
  j["workers"] = c.train.workers;
  return j;
}

// Applies every key present in `j`; unknown keys are a config error.
inline void apply_config_json(ExperimentConfig& c, const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& [key, v] : j.items()) {
    try {
      if (key == "dataset_path") c.dataset_path = v.get<std::string>();
      else if (key == "synthetic_users") c.synthetic.n_users = v.get<std::size_t>();
      else if (key == "synthetic_items") c.synthetic.n_items = v.get<std::size_t>();
      else if (key == "synthetic_seed") c.synthetic.seed = v.get<std::uint64_t>();
      else if (key == "synthetic_latent_dim") c.synthetic.latent_dim = v.get<std::size_t>();
      else if (key == "synthetic_mean_ratings_per_user") c.synthetic.mean_ratings_per_user = v.get<double>();
      else if (key == "synthetic_min_ratings_per_user") c.synthetic.min_ratings_per_user = v.get<std::size_t>();
      else if (key == "synthetic_popularity_exponent") c.synthetic.popularity_exponent = v.get<double>();
      else if (key == "synthetic_selection_affinity") c.synthetic.selection_affinity = v.get<double>();
      else if (key == "synthetic_rating_noise") c.synthetic.rating_noise = v.get<double>();
      else if (key == "max_users") c.max_users = v.get<std::size_t>();
      else if (key == "max_items") c.max_items = v.get<std::size_t>();
      else if (key == "K2") c.K2_list = v.get<std::vector<std::size_t>>();
      else if (key == "N") {
        c.N_list.clear();
        for (const auto& x : v) c.N_list.push_back(static_cast<std::size_t>(std::llround(x.get<double>())));
      } else if (key == "regimes") {
        c.regimes.clear();
        for (const auto& x : v) c.regimes.push_back(parse_regime(x.get<std::string>()));
      } else if (key == "n_runs") c.n_runs = v.get<std::size_t>();
      else if (key == "seed") c.master_seed = v.get<std::uint64_t>();
      else if (key == "output_dir") c.output_dir = v.get<std::string>();
      else if (key == "eval_frac") c.eval_frac = v.get<double>();
      else if (key == "logging_frac") c.logging_frac = v.get<double>();
      else if (key == "svd_dim") c.svd_dim = v.get<std::size_t>();
      else if (key == "svd_source") {
        const auto s = v.get<std::string>();
        if (s == "binary") c.svd_source = SvdSource::kBinary;
        else if (s == "ratings") c.svd_source = SvdSource::kRatings;
        else throw ConfigError("svd_source must be binary or ratings");
      } else if (key == "logging_epochs") c.logging_epochs = v.get<std::size_t>();
      else if (key == "logging_candidate_temperature") c.logging_candidate_temperature = v.get<double>();
      else if (key == "logging_reranker_temperature") c.logging_reranker_temperature = v.get<double>();
      else if (key == "eval_samples") c.eval_samples = v.get<std::size_t>();
      else if (key == "K") c.train.K = v.get<std::size_t>();
      else if (key == "n_mc") c.train.n_mc = v.get<std::size_t>();
      else if (key == "batch_size") c.train.batch_size = v.get<std::size_t>();
      else if (key == "max_epochs") c.train.max_epochs = v.get<std::size_t>();
      else if (key == "patience") c.train.patience = v.get<std::size_t>();
      else if (key == "learning_rate") c.train.learning_rate = v.get<double>();
      else if (key == "validation_frac") c.train.validation_frac = v.get<double>();
      else if (key == "validation_mc") c.train.validation_mc = v.get<std::size_t>();
      else if (key == "pretrain_epochs") c.train.pretrain_epochs = v.get<std::size_t>();
      else if (key == "pretrain_through_logging_candidate") c.train.pretrain_through_logging_candidate = v.get<bool>();
      else if (key == "propensity_floor") c.train.propensity_floor = v.get<double>();
      else if (key == "control_variate") c.train.control_variate = v.get<bool>();
      else if (key == "temperature") c.train.temperature = v.get<double>();
      else if (key == "workers") c.train.workers = v.get<std::size_t>();
      else throw ConfigError("unknown config key '" + key + "'");
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("bad value for config key '" + key + "': " + e.what());
    }
  }
}

inline ExperimentConfig load_config(const std::string& path, ExperimentConfig base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
  }
  apply_config_json(base, j);
  return base;
}

// ---- world construction ---------------------------------------------------

// Everything a run index shares across its cells.
struct World {
  RatingsTable ratings;
  RelevanceMatrix rel;
  UserSplit split;
  FactorModel init;     // SVD initialization of every trained policy
  FactorModel logging;  // production model
};

inline RatingsTable load_world_ratings(const ExperimentConfig& c) {
  RatingsTable raw = c.dataset_path.empty() ? synthesize_ratings(c.synthetic) : load_ratings(c.dataset_path);
  if (c.max_items || c.max_users) {
    raw = restrict_world(raw, c.max_items ? c.max_items : raw.n_items(), c.max_users ? c.max_users : raw.n_users(),
                         derive_seed(c.master_seed, {0x5ab5}));
  }
  return raw;
}

inline std::shared_ptr<const World> build_world(const ExperimentConfig& c, std::size_t run_index,
                                                const RatingsTable* ratings = nullptr) {
  auto w = std::make_shared<World>();
  w->ratings = ratings ? *ratings : load_world_ratings(c);
  w->rel = binarize(w->ratings);
  w->split = split_users(w->rel, c.eval_frac, c.logging_frac, derive_seed(c.master_seed, {0x59, run_index}));
  w->init = c.svd_source == SvdSource::kBinary
                ? svd_init(w->rel, c.svd_dim, derive_seed(c.master_seed, {0x5d}))
                : svd_init(w->ratings, c.svd_dim, derive_seed(c.master_seed, {0x5d}), c.svd_source);
  TrainConfig lt = c.train;
  lt.K2 = std::max(lt.K2, lt.K);
  w->logging = train_logging_model(w->init, w->rel, w->split.logging_users, lt, c.logging_epochs,
                                   derive_seed(c.master_seed, {0x1066, run_index}));
  return w;
}

inline TwoStageLoggingPolicy logging_pipeline(const ExperimentConfig& c, const World& w, std::size_t K2) {
  TwoStageLoggingPolicy p{PLPolicy(w.logging, c.logging_candidate_temperature),
                          PLPolicy(w.logging, c.logging_reranker_temperature), K2, c.train.K};
  p.validate();
  return p;
}

inline std::uint64_t cell_seed(std::uint64_t master, Regime regime, std::size_t K2, std::size_t N, std::size_t run) {
  return derive_seed(master, {0xce11, static_cast<std::uint64_t>(regime), K2, N, run});
}

struct CellOutcome {
  double ndcg10 = 0.0;
  std::vector<HistoryRow> history;
};

// One (regime, K2, N, run) unit of the grid. The click log and the evaluation
// streams depend on (run, K2) only, so regimes are compared on identical
// data, and the log for a smaller N is a prefix of the log for a larger N.
inline CellOutcome run_cell_detailed(const ExperimentConfig& c, const World& w, Regime regime, std::size_t K2,
                                     std::size_t N, std::size_t run_index) {
  const TwoStageLoggingPolicy logging = logging_pipeline(c, w, K2);
  const ExaminationModel exam{};
  const ClickLog log = simulate_log(logging, w.rel, w.split.interaction_users, N, exam,
                                    derive_seed(c.master_seed, {0x10c, run_index, K2}), c.train.workers);
  TrainConfig tc = c.train;
  tc.regime = regime;
  tc.K2 = K2;
  tc.seed = cell_seed(c.master_seed, regime, K2, N, run_index);
  const PropensityTable rho0 = estimate_propensities(log, exam, tc.effective_floor());

  TrainInputs in;
  in.log = &log;
  in.rho0 = &rho0;
  in.init_candidate = &w.init;
  in.init_reranker = &w.init;
  in.logging_candidate = &logging.candidate;
  TrainResult tr = train(in, tc);
  CellOutcome out;
  out.ndcg10 = ndcg_at_10(tr.candidate, tr.reranker, w.rel, w.split.eval_users, K2, tc.K, c.eval_samples,
                          derive_seed(c.master_seed, {0xe7a1, run_index, K2}), Backend::kMonteCarlo, tc.workers)
                   .value;
  out.history = std::move(tr.history);
  return out;
}

inline double run_cell(const ExperimentConfig& c, Regime regime, std::size_t K2, std::size_t N, std::size_t run_index) {
  c.validate();
  const auto w = build_world(c, run_index);
  return run_cell_detailed(c, *w, regime, K2, N, run_index).ndcg10;
}

// ---- grid -----------------------------------------------------------------

struct CellKey {
  Regime regime;
  std::size_t K2;
  std::size_t N;
  auto operator<=>(const CellKey&) const = default;
};

struct CellResult {
  std::vector<std::pair<std::size_t, double>> runs;  // (run index, NDCG@10)
  std::vector<std::string> failures;

  std::vector<double> values() const {
    std::vector<double> v;
    for (auto& r : runs) v.push_back(r.second);
    return v;
  }
  double mean() const { return mean_of(values()); }
  double std_err() const { return standard_error(values()); }
};

struct ResultsGrid {
  std::map<CellKey, CellResult> cells;
  std::vector<std::size_t> K2_list;
  std::vector<std::size_t> N_list;
  std::vector<Regime> regimes;
};

inline std::string cell_file_name(const CellKey& k, std::size_t run, std::uint64_t master_seed) {
  const std::uint64_t h = derive_seed(master_seed, {static_cast<std::uint64_t>(k.regime), k.K2, k.N, run});
  char buf[64];
  std::snprintf(buf, sizeof buf, "%016llx.json", static_cast<unsigned long long>(h));
  return buf;
}

inline std::string format_double(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

// Config fields a cell result depends on; checkpoints written under a
// different config are recomputed.
inline nlohmann::json result_config(const ExperimentConfig& c) {
  nlohmann::json j = config_to_json(c);
  for (const char* k : {"output_dir", "workers", "K2", "N", "regimes", "n_runs"}) j.erase(k);
  return j;
}

// Writes grid.csv (one row per run) plus summary.csv and table.txt.
inline void write_grid_outputs(const ResultsGrid& grid, const std::filesystem::path& dir);

struct GridOptions {
  std::vector<CellKey> only;  // restrict to these cells; empty runs the whole grid
  bool verbose = false;
};

inline ResultsGrid run_grid(const ExperimentConfig& c, const GridOptions& opts = {}) {
  c.validate();
  namespace fs = std::filesystem;
  const fs::path dir(c.output_dir);
  const fs::path cells_dir = dir / "cells";
  fs::create_directories(cells_dir);
  {
    std::ofstream cfg(dir / "config.json");
    cfg << config_to_json(c).dump(2) << '\n';
  }
  ResultsGrid grid;
  grid.K2_list = c.K2_list;
  grid.N_list = c.N_list;
  grid.regimes = c.regimes;
  std::optional<RatingsTable> ratings;
  const nlohmann::json fingerprint = result_config(c);
  for (std::size_t run = 0; run < c.n_runs; ++run) {
    std::shared_ptr<const World> world;
    for (std::size_t K2 : c.K2_list) {
      for (std::size_t N : c.N_list) {
        for (Regime regime : c.regimes) {
          const CellKey key{regime, K2, N};
          if (!opts.only.empty() && std::find(opts.only.begin(), opts.only.end(), key) == opts.only.end()) continue;
          CellResult& cell = grid.cells[key];
          const fs::path ckpt = cells_dir / cell_file_name(key, run, c.master_seed);
          if (fs::exists(ckpt)) {
            std::ifstream in(ckpt);
            const auto j = nlohmann::json::parse(in, nullptr, false);
            if (!j.is_discarded() && j.value("config", nlohmann::json()) == fingerprint) {
              cell.runs.emplace_back(run, j.at("ndcg10").get<double>());
              continue;
            }
          }
          try {
            if (!ratings) ratings = load_world_ratings(c);
            if (!world) world = build_world(c, run, &*ratings);
            CellOutcome o = run_cell_detailed(c, *world, regime, K2, N, run);
            cell.runs.emplace_back(run, o.ndcg10);
            nlohmann::json j{{"regime", regime_name(regime)}, {"K2", K2}, {"N", N}, {"run", run}, {"ndcg10", o.ndcg10},
                             {"config", fingerprint}};
            const fs::path tmp = ckpt.string() + ".tmp";
            {
              std::ofstream out(tmp);
              out << j.dump() << '\n';
            }
            fs::rename(tmp, ckpt);
            std::ofstream hist(cells_dir / (ckpt.stem().string() + ".history.csv"));
            write_history_csv(hist, o.history);
            if (opts.verbose)
              std::fprintf(stderr, "cell %s K2=%zu N=%zu run=%zu ndcg10=%.4f\n", regime_name(regime).c_str(), K2, N,
                           run, o.ndcg10);
          } catch (const Error& e) {
            cell.failures.push_back("run " + std::to_string(run) + " (" + regime_name(regime) + ", K2=" +
                                    std::to_string(K2) + ", N=" + std::to_string(N) + "): " + e.what());
          }
        }
      }
    }
  }
  write_grid_outputs(grid, dir);
  return grid;
}

// Rebuilds a grid from grid.csv.
inline ResultsGrid read_grid_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  ResultsGrid grid;
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string regime, k2, n, run, v;
    std::getline(ss, regime, ',');
    std::getline(ss, k2, ',');
    std::getline(ss, n, ',');
    std::getline(ss, run, ',');
    std::getline(ss, v, ',');
    const CellKey key{parse_regime(regime), std::stoul(k2), std::stoul(n)};
    grid.cells[key].runs.emplace_back(std::stoul(run), std::stod(v));
    if (std::find(grid.K2_list.begin(), grid.K2_list.end(), key.K2) == grid.K2_list.end()) grid.K2_list.push_back(key.K2);
    if (std::find(grid.N_list.begin(), grid.N_list.end(), key.N) == grid.N_list.end()) grid.N_list.push_back(key.N);
    if (std::find(grid.regimes.begin(), grid.regimes.end(), key.regime) == grid.regimes.end())
      grid.regimes.push_back(key.regime);
  }
  std::sort(grid.K2_list.begin(), grid.K2_list.end());
  std::sort(grid.N_list.begin(), grid.N_list.end());
  std::sort(grid.regimes.begin(), grid.regimes.end());
  return grid;
}

// ---- rendering ------------------------------------------------------------

struct RenderedTable {
  std::string text;
  std::string csv;
};

inline std::string format_cell(double mean, double se) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3f (%.3f)", mean, se);
  return buf;
}

inline std::string format_count(std::size_t n) {
  if (n >= 1000000 && n % 10000 == 0) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%gM", static_cast<double>(n) / 1e6);
    return buf;
  }
  if (n >= 1000 && n % 1000 == 0) return std::to_string(n / 1000) + "k";
  return std::to_string(n);
}

// Rows are regimes, column groups K2, sub-columns N. The best mean of each
// column (compared at the printed precision) is wrapped in ** **.
inline RenderedTable render_table(const ResultsGrid& grid) {
  RenderedTable out;
  std::ostringstream text, csv;
  csv << "regime,K2,N,mean,se,n_runs\n";
  std::vector<std::pair<std::size_t, std::size_t>> columns;
  for (std::size_t k2 : grid.K2_list)
    for (std::size_t n : grid.N_list) columns.emplace_back(k2, n);

  constexpr int kLabel = 12;
  constexpr int kWidth = 19;
  char buf[128];
  std::snprintf(buf, sizeof buf, "%-*s", kLabel, "");
  text << buf;
  for (std::size_t k2 : grid.K2_list) {
    const std::string g = "K2=" + std::to_string(k2);
    std::snprintf(buf, sizeof buf, "%-*s", static_cast<int>(kWidth * grid.N_list.size()), g.c_str());
    text << buf;
  }
  text << '\n';
  std::snprintf(buf, sizeof buf, "%-*s", kLabel, "Method");
  text << buf;
  for (auto [k2, n] : columns) {
    const std::string h = "N=" + format_count(n);
    std::snprintf(buf, sizeof buf, "%-*s", kWidth, h.c_str());
    text << buf;
  }
  text << '\n';

  std::map<std::pair<std::size_t, std::size_t>, std::string> best;
  for (auto col : columns) {
    std::string top;
    double top_v = -std::numeric_limits<double>::infinity();
    for (Regime r : grid.regimes) {
      auto it = grid.cells.find({r, col.first, col.second});
      if (it == grid.cells.end() || it->second.runs.empty()) continue;
      std::snprintf(buf, sizeof buf, "%.3f", it->second.mean());
      const double v = std::stod(buf);
      if (v > top_v) {
        top_v = v;
        top = buf;
      }
    }
    best[col] = top;
  }
  for (Regime r : grid.regimes) {
    std::snprintf(buf, sizeof buf, "%-*s", kLabel, regime_name(r).c_str());
    text << buf;
    for (auto col : columns) {
      auto it = grid.cells.find({r, col.first, col.second});
      std::string cell = "-";
      if (it != grid.cells.end() && !it->second.runs.empty()) {
        const double m = it->second.mean();
        const double se = it->second.std_err();
        cell = format_cell(m, se);
        std::snprintf(buf, sizeof buf, "%.3f", m);
        if (best[col] == buf) cell = "**" + cell + "**";
        csv << regime_name(r) << ',' << col.first << ',' << col.second << ',' << format_double(m) << ','
            << format_double(se) << ',' << it->second.runs.size() << '\n';
      }
      std::snprintf(buf, sizeof buf, "%-*s", kWidth, cell.c_str());
      text << buf;
    }
    text << '\n';
  }
  if (grid.regimes.empty() || grid.cells.empty()) {
    // Header only.
    std::string t = text.str();
    std::size_t keep = 0;
    for (int lines = 0; lines < 2 && keep < t.size(); ++keep)
      if (t[keep] == '\n') ++lines;
    out.text = t.substr(0, keep);
  } else {
    out.text = text.str();
  }
  out.csv = csv.str();
  return out;
}

inline void write_grid_outputs(const ResultsGrid& grid, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "grid.csv");
    out << "regime,K2,N,run,ndcg10\n";
    for (const auto& [key, cell] : grid.cells) {
      auto runs = cell.runs;
      std::sort(runs.begin(), runs.end());
      for (auto [run, v] : runs)
        out << regime_name(key.regime) << ',' << key.K2 << ',' << key.N << ',' << run << ',' << format_double(v) << '\n';
    }
  }
  const RenderedTable t = render_table(grid);
  std::ofstream(dir / "table.txt") << t.text;
  std::ofstream(dir / "summary.csv") << t.csv;
  std::vector<std::string> failures;
  for (const auto& [key, cell] : grid.cells) failures.insert(failures.end(), cell.failures.begin(), cell.failures.end());
  if (!failures.empty()) {
    std::ofstream f(dir / "failures.txt");
    for (const auto& s : failures) f << s << '\n';
  }
}

}  // namespace tscltr

#endif  // TSCLTR_EXPERIMENT_HPP_
