/*
 * Copyright 2026 The denas Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "denas/io.hpp"
#include "denas/pipeline.hpp"
#include "doctest.h"

using namespace denas;
namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

namespace {

const std::string kTiny =
    " data.count=16 data.images=4 data.image_size=48 data.patch=16 prior.epochs=2 search.epochs=2"
    " train.epochs=2 train.warmup=1 eval.count=8 eval.images=2 eval.image_size=32 lut.reps=2 lut.warmups=1";

int cli(const std::string& args) {
  const std::string cmd = std::string(DENAS_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("denas_cli_" + name);
  fs::remove_all(p);
  return p.string();
}

std::map<std::string, std::string> tree(const std::string& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = read_text(e.path().string());
  }
  return out;
}

}  // namespace

TEST_CASE("config defaults round-trip") {
  const RunConfig c;
  CHECK(RunConfig::from_json(c.to_json()).to_json() == c.to_json());
  const RunConfig d = desk_config();
  CHECK(RunConfig::from_json(d.to_json(), d).to_json() == d.to_json());
  CHECK(RunConfig::from_json(Json::object(), paper_config()).part.rows == 3);
}

TEST_CASE("config rejects unknown keys and mistyped values") {
  CHECK_THROWS_AS(RunConfig::from_json(Json{{"search", {{"lamda", 1.0}}}}), UsageError);
  CHECK_THROWS_AS(RunConfig::from_json(Json{{"colour", 1}}), UsageError);
  CHECK_THROWS_AS(load_config("", {"search.lamda=1"}), UsageError);
  CHECK_THROWS_AS(load_config("", {"search.epochs=2.5"}), UsageError);
  CHECK_THROWS_AS(load_config("", {"search.epochs=many"}), UsageError);
  CHECK_THROWS_AS(load_config("", {"seed=-1"}), UsageError);
  CHECK_THROWS_AS(load_config("", {"data.noise.sigmaa=3"}), UsageError);
  CHECK_THROWS_AS(load_config("", {"search.strategy=best"}), UsageError);
  CHECK_THROWS_AS(load_config("", {"data.split=1.0"}), UsageError);
  CHECK_THROWS_AS(load_config("", {"nokey"}), UsageError);
  CHECK_THROWS_AS(load_config("/nonexistent/config.json", {}), UsageError);
}

TEST_CASE("overrides apply in order and are logged") {
  std::vector<std::string> log;
  const RunConfig c = load_config("", {"search.lambda=0.001", "search.lambda=0.002", "data.noise.sigma=15",
                                       "paths.run=abc", "search.strategy=gdas"},
                                  &log);
  CHECK(c.search.loss.lambda == 0.002);
  CHECK(c.data.noise.sigma == doctest::Approx(15.0 / 255.0));
  CHECK(c.paths.run == "abc");
  CHECK(c.search.strategy == CellStrategy::gdas);
  REQUIRE(log.size() == 5);
  CHECK(log[0] == "search.lambda = 0.001");
  CHECK(log[3] == "paths.run = \"abc\"");
  // Evaluation follows the training noise unless listed.
  REQUIRE(c.eval.cases.size() == 1);
  CHECK(c.eval.cases[0].label() == "awgn15");
  const RunConfig e = load_config("", {R"(eval.cases=[{"sigma":50},{"kind":"spatial","map_case":2}])"});
  REQUIRE(e.eval.cases.size() == 2);
  CHECK(e.eval.cases[0].label() == "awgn50");
  CHECK(e.eval.cases[1].label() == "case2");
  CHECK_THROWS_AS(load_config("", {R"(eval.cases=[{"sigmaa":50}])"}), UsageError);
  CHECK_THROWS_AS(load_config("", {"eval.cases=[]"}), UsageError);
}

TEST_CASE("run seed reaches every stochastic section") {
  const RunConfig a = load_config("", {"seed=1"});
  const RunConfig b = load_config("", {"seed=2"});
  CHECK(a.search_config().seed != b.search_config().seed);
  CHECK(a.train_config().seed != b.train_config().seed);
  CHECK(a.prior_config().seed != b.prior_config().seed);
  CHECK(a.data_config().seed == b.data_config().seed);
}

TEST_CASE("space size report") {
  // Toy: one row of two cells. Layer 0 has one pathway (no choice), layer 1
  // two pathways, floor(3 / 2) = 1 pattern exponent of 8 x log10(5).
  RunConfig toy = load_config("", {"part.rows=1", "part.cells_per_row=2"});
  CHECK(cmd_spacesize(toy, "")["log10_total"].get<double>() == doctest::Approx(3 * 8 * std::log10(5.0)));
  RunConfig one = load_config("", {"spacesize.ops=1", "spacesize.widths=1"});
  CHECK(cmd_spacesize(one, "")["log10_total"].get<double>() == 0.0);
  // (5^8)^63 for the seven-pathway output cell of the full-size grid.
  const Json r = cmd_spacesize(paper_config(), "");
  CHECK(r["max_pathways"] == 7);
  CHECK(r["log10_cell_max"].get<double>() == doctest::Approx(63 * 8 * std::log10(5.0)).epsilon(1e-12));
  CHECK(std::round(r["log10_cell_max"].get<double>()) == 352.0);
}

TEST_CASE("cli exit codes") {
  CHECK(cli("") == 2);
  CHECK(cli("nosuchcommand") == 2);
  CHECK(cli("spacesize --bogus") == 2);
  CHECK(cli("spacesize --out " + scratch("sz") + " search.nokey=1") == 2);
  CHECK(cli("spacesize --out " + scratch("sz")) == 0);
  CHECK(file_exists((fs::temp_directory_path() / "denas_cli_sz/spacesize.config.json").string()));
  CHECK(cli("--help") == 0);
}

TEST_CASE("cli lut") {
  const std::string out = scratch("lut");
  REQUIRE(cli("lut --out " + out + " --reps 10 lut.warmups=1") == 0);
  const LatencyTable t = LatencyTable::from_json(read_json(out + "/lut.json"));
  CHECK(t.meta.reps == 10);
  CHECK_NOTHROW(t.check_covers(RunConfig{}.part));
  const std::string before = read_text(out + "/lut.json");
  CHECK(cli("lut --out " + out + " --reps 10") == 2);
  CHECK(read_text(out + "/lut.json") == before);
  CHECK(cli("lut --out " + out + " --reps 3 --force lut.warmups=1") == 0);
  CHECK(LatencyTable::from_json(read_json(out + "/lut.json")).meta.reps == 3);
}

TEST_CASE("cli decode") {
  const std::string out = scratch("decode");
  REQUIRE(cli("decode " + std::string(DENAS_FIXTURES) + "/run1 --out " + out) == 0);
  CHECK(read_json(out + "/arch.json") == read_json(std::string(DENAS_FIXTURES) + "/run1_expected.json"));

  // Malformed run directories.
  CHECK(cli("decode " + out + "/missing --out " + out) == 2);
  const std::string bad = scratch("decode_bad");
  fs::create_directories(bad);
  CHECK(cli("decode " + bad + " --out " + out) == 2);
  fs::copy(std::string(DENAS_FIXTURES) + "/run1", bad, fs::copy_options::recursive);
  write_text_atomic(bad + "/part0/archweights.json", "{\"rows\": 1,");
  CHECK(cli("decode " + bad + " --out " + out) == 2);
  write_text_atomic(bad + "/part0/archweights.json", R"({"rows": 1, "cells_per_row": 2, "cells": []})");
  CHECK(cli("decode " + bad + " --out " + out) == 2);
  fs::remove(bad + "/part0/config.json");
  CHECK(cli("decode " + bad + " --out " + out) == 2);

  CHECK(cli("decode --random --seed 3 --out " + out) == 0);
  CHECK_NOTHROW(DecodedArchitecture::from_json(read_json(out + "/arch.json")));
}

TEST_CASE("cli pipeline is deterministic") {
  const std::string a = scratch("det_a");
  const std::string b = scratch("det_b");
  for (const auto& out : {a, b}) {
    const std::string common = " --out " + out + " --seed 5 precision=double" + kTiny;
    REQUIRE(cli("prior" + common) == 0);
    REQUIRE(cli("search --parallel" + common) == 0);
    REQUIRE(cli("decode" + common) == 0);
    REQUIRE(cli("train" + common) == 0);
    REQUIRE(cli("eval" + common) == 0);
    REQUIRE(cli("stats --run " + out + "/search" + common) == 0);
    REQUIRE(cli("spacesize" + common) == 0);
  }
  const auto ta = tree(a);
  const auto tb = tree(b);
  REQUIRE(ta.size() == tb.size());
  CHECK(ta.size() >= 25);
  for (const auto& [name, text] : ta) {
    INFO(name);
    REQUIRE(tb.count(name) == 1);
    CHECK(tb.at(name) == text);
  }

  // Output schemas.
  const Json report = read_json(a + "/report.json");
  for (const char* k : {"architecture", "params", "epochs", "final_loss", "cases"}) CHECK(report.contains(k));
  for (const char* k : {"label", "count", "psnr", "ssim", "noisy_psnr", "noisy_ssim"}) {
    CHECK(report["cases"][0].contains(k));
  }
  CHECK(read_text(a + "/search/part1/metrics.csv").rfind("epoch,l_dp,l_comp,l_search,lr_w,lr_arch\n", 0) == 0);
  const Json prior = read_json(a + "/prior_report.json");
  REQUIRE(prior["boundaries"].size() == 3);
  for (int i = 0; i < 3; ++i) {
    const PartSpec s = read_part_spec(a + "/search/part" + std::to_string(i));
    CHECK(prior["boundaries"][i]["in"] == s.in_channels);
    CHECK(prior["boundaries"][i]["out"] == s.out_channels);
  }
  for (const char* f : {"rates.csv", "complexity.csv", "resolution.csv", "features.csv"}) CHECK(ta.count(f) == 1);

  // A different seed changes the search.
  const std::string c = scratch("det_c");
  const std::string common = " --out " + c + " --seed 6 precision=double" + kTiny;
  REQUIRE(cli("prior" + common) == 0);
  REQUIRE(cli("search" + common) == 0);
  CHECK(read_text(c + "/search/part0/archweights.json") != ta.at("search/part0/archweights.json"));
}

TEST_CASE("cli search needs its inputs") {
  const std::string out = scratch("needs");
  CHECK(cli("search --out " + out + kTiny) == 2);
  REQUIRE(cli("prior --out " + out + kTiny) == 0);
  CHECK(cli("search --out " + out + kTiny + " search.lambda=0.01") == 2);
  CHECK(cli("train --out " + out + kTiny) == 2);
  CHECK(cli("eval --out " + out + kTiny) == 2);
}
