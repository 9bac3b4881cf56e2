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

// Command-line front end: run grids, re-render tables, run oracle suites and
// write synthetic ratings files.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tscltr/experiment.hpp"
#include "tscltr/validate.hpp"

namespace {

using namespace tscltr;

// "a,b,c" -> JSON array; anything else parsed as JSON, falling back to a string.
nlohmann::json flag_value(const std::string& raw, const nlohmann::json& like) {
  if (like.is_array()) {
    nlohmann::json arr = nlohmann::json::array();
    std::stringstream ss(raw);
    std::string part;
    while (std::getline(ss, part, ',')) arr.push_back(flag_value(part, nlohmann::json()));
    return arr;
  }
  nlohmann::json v = nlohmann::json::parse(raw, nullptr, false);
  if (v.is_discarded()) return raw;
  return v;
}

CellKey parse_cell(const std::string& s) {
  std::vector<std::string> parts;
  std::stringstream ss(s);
  std::string p;
  while (std::getline(ss, p, ',')) parts.push_back(p);
  if (parts.size() != 3) throw ConfigError("--cell expects regime,K2,N");
  try {
    return {parse_regime(parts[0]), std::stoul(parts[1]),
            static_cast<std::size_t>(std::llround(std::stod(parts[2])))};
  } catch (const std::logic_error&) {
    throw ConfigError("--cell expects regime,K2,N with numeric K2 and N");
  }
}

int run_validate(const std::string& suite) {
  std::vector<validate::SuiteResult> results;
  if (suite == "unbiasedness" || suite == "all") results.push_back(validate::unbiasedness());
  if (suite == "sampler" || suite == "all") results.push_back(validate::sampler());
  if (suite == "gradients" || suite == "all") results.push_back(validate::gradients());
  if (suite == "slot-mass" || suite == "all") results.push_back(validate::slot_mass());
  bool ok = true;
  for (const auto& r : results) {
    std::printf("%s: %s\n", r.name.c_str(), r.passed ? "PASS" : "FAIL");
    for (const auto& l : r.lines) std::printf("  %s\n", l.c_str());
    ok = ok && r.passed;
  }
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Two-stage counterfactual learning-to-rank experiments"};
  app.require_subcommand(1);

  auto* run = app.add_subcommand("run", "run a results grid (or one cell of it)");
  std::string config_path, preset, cell, out_dir;
  std::optional<std::uint64_t> seed;
  bool quiet = false;
  run->add_option("--config", config_path, "JSON config; keys mirror the flags below")->check(CLI::ExistingFile);
  run->add_option("--preset", preset, "base configuration")->check(CLI::IsMember({"desk", "full"}));
  run->add_option("--cell", cell, "only this cell: regime,K2,N");
  run->add_option("--out", out_dir, "output directory");
  run->add_option("--seed", seed, "master seed");
  run->add_flag("--quiet", quiet, "no per-cell progress on stderr");
  // One flag per config key, applied after the preset and the config file.
  std::map<std::string, std::string> overrides;
  const nlohmann::json defaults = config_to_json(ExperimentConfig{});
  for (const auto& [key, value] : defaults.items()) {
    if (key == "seed" || key == "output_dir") continue;
    run->add_option_function<std::string>("--" + key, [&overrides, key](const std::string& v) { overrides[key] = v; },
                                          "config key (default " + value.dump() + ")");
  }

  auto* table = app.add_subcommand("table", "re-render table.txt and summary.csv from grid.csv");
  std::string in_dir;
  table->add_option("--in", in_dir, "directory holding grid.csv")->required();

  auto* val = app.add_subcommand("validate", "run an oracle suite against exact enumeration");
  std::string suite;
  val->add_option("--suite", suite)->required()->check(
      CLI::IsMember({"unbiasedness", "gradients", "sampler", "slot-mass", "all"}));

  auto* synth = app.add_subcommand("synth", "write a synthetic MovieLens-style ratings file");
  std::string synth_out;
  SyntheticWorldConfig sw;
  synth->add_option("--out", synth_out, "ratings file (user::item::rating::timestamp)")->required();
  synth->add_option("--users", sw.n_users);
  synth->add_option("--items", sw.n_items);
  synth->add_option("--seed", sw.seed);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      ExperimentConfig c = preset == "full" ? full_preset() : preset == "desk" ? desk_preset() : ExperimentConfig{};
      if (!config_path.empty()) c = load_config(config_path, c);
      const nlohmann::json current = config_to_json(c);
      nlohmann::json patch = nlohmann::json::object();
      for (const auto& [key, raw] : overrides) patch[key] = flag_value(raw, current.at(key));
      apply_config_json(c, patch);
      if (seed) c.master_seed = *seed;
      if (!out_dir.empty()) c.output_dir = out_dir;
      GridOptions opts;
      opts.verbose = !quiet;
      if (!cell.empty()) opts.only = {parse_cell(cell)};
      const ResultsGrid g = run_grid(c, opts);
      std::cout << render_table(g).text;
      std::size_t failures = 0;
      for (const auto& [k, cr] : g.cells) failures += cr.failures.size();
      if (failures) std::cerr << failures << " run(s) failed; see " << c.output_dir << "/failures.txt\n";
      return failures ? 1 : 0;
    }
    if (*table) {
      const ResultsGrid g = read_grid_csv(std::filesystem::path(in_dir) / "grid.csv");
      const RenderedTable t = render_table(g);
      std::ofstream(std::filesystem::path(in_dir) / "table.txt") << t.text;
      std::ofstream(std::filesystem::path(in_dir) / "summary.csv") << t.csv;
      std::cout << t.text;
      return 0;
    }
    if (*val) return run_validate(suite);
    if (*synth) {
      std::ofstream out(synth_out);
      if (!out) throw DataError("cannot write '" + synth_out + "'");
      write_ratings(out, synthesize_ratings(sw));
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
