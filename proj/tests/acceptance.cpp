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

// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion;
// pass criterion numbers as arguments to run a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <regex>
#include <sstream>

#include "denas/io.hpp"
#include "denas/pipeline.hpp"

using namespace denas;
namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;
using Clock = std::chrono::steady_clock;

namespace {

struct Result {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v, int digits = 2) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(digits);
  os << v;
  return os.str();
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

fs::path work_root() { return fs::temp_directory_path() / "denas_acceptance"; }

std::string fresh(const std::string& name) {
  const fs::path p = work_root() / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p.string();
}

// ---------------------------------------------------------------------------
// Unit-test selections run as subprocesses.

struct Selection {
  std::string binary;
  std::string filter;
  int min_cases;
};

struct SelectionRun {
  bool ok = true;
  int cases = 0;
  double seconds = 0;
  std::string failures;
};

SelectionRun run_selections(const std::vector<Selection>& sels) {
  SelectionRun r;
  for (const auto& s : sels) {
    const std::string cmd = std::string(DENAS_TEST_BIN_DIR) + "/" + s.binary + " --test-case=\"" + s.filter + "\" 2>&1";
    const auto t0 = Clock::now();
    FILE* pipe = popen(cmd.c_str(), "r");
    if (!pipe) {
      r.ok = false;
      r.failures += s.binary + " did not start; ";
      continue;
    }
    std::string out;
    char buf[4096];
    while (std::fgets(buf, sizeof buf, pipe)) out += buf;
    const int status = pclose(pipe);
    r.seconds += seconds_since(t0);
    std::smatch m;
    static const std::regex counts(R"(test cases:\s*(\d+)\s*\|\s*(\d+) passed\s*\|\s*(\d+) failed)");
    int cases = 0, failed = 1;
    if (std::regex_search(out, m, counts)) {
      cases = std::stoi(m[1]);
      failed = std::stoi(m[3]);
    }
    r.cases += cases;
    if (status != 0 || failed != 0 || cases < s.min_cases) {
      r.ok = false;
      r.failures += s.binary + " [" + s.filter + "] ran " + std::to_string(cases) + " failed " +
                    std::to_string(failed) + "; ";
    }
  }
  return r;
}

Result from_selections(const std::vector<Selection>& sels, double time_limit = 0) {
  const SelectionRun r = run_selections(sels);
  Result out;
  out.pass = r.ok && (time_limit <= 0 || r.seconds <= time_limit);
  out.detail = std::to_string(r.cases) + " test cases in " + fmt(r.seconds, 1) + " s";
  if (time_limit > 0) out.detail += " (limit " + fmt(time_limit, 0) + " s)";
  if (!r.ok) out.detail += "; " + r.failures;
  return out;
}

Result criterion1() {
  // Every primitive, operator, resampling module, toy model, supernet part
  // and regularizer, each over 20 seeds where randomized.
  return from_selections({{"test_autodiff", "fd:*", 9},
                          {"test_autodiff", "finite difference check*", 5},
                          {"test_zoo", "fd:*", 2},
                          {"test_supernet", "fd:*", 1},
                          {"test_regularizers", "*gradient*", 3}},
                         600.0);
}

Result criterion2() {
  return from_selections({{"test_supernet", "darts cell: autodiff equals the closed-form alpha gradient", 1},
                          {"test_supernet", "gradient sparsity: single-op versus GDAS", 1}});
}

Result criterion3() {
  return from_selections({{"test_supernet", "Gumbel-argmax frequencies match softmax", 1},
                          {"test_supernet", "single-op estimator is unbiased on a linear toy", 1}});
}

Result criterion4() {
  return from_selections({{"test_decoder", "decode_resolution fixtures", 1},
                          {"test_decoder", "decode_dense fixtures", 1},
                          {"test_decoder", "decode_cell_and_kernel", 1},
                          {"test_decoder", "bfs_topology", 1},
                          {"test_cli", "cli decode", 1}});
}

Result criterion5() {
  return from_selections({{"test_zoo", "IB roundtrip*", 1},
                          {"test_autodiff", "pixel_shuffle examples", 1},
                          {"test_zoo", "slice_kernel aliases the full kernel", 1}});
}

// ---------------------------------------------------------------------------

RunConfig small_search_config(std::uint64_t seed) {
  RunConfig c = desk_config();
  c.seed = seed;
  c.data.count = 64;
  return c;
}

std::unique_ptr<PriorModel<float>> train_small_prior(const RunConfig& c, const DatasetSplit& split) {
  PriorSpec spec = c.prior;
  Rng rng(derive_seed(c.seed, 0x9040));
  auto prior = std::make_unique<PriorModel<float>>(spec, rng);
  train_prior(*prior, split, c.prior_config());
  return prior;
}

DecodedArchitecture decode_outcomes(const std::vector<PartOutcome>& outs, const RunConfig& c,
                                    const PriorSpec& prior) {
  std::vector<DecodedPart> parts;
  for (const auto& o : outs) parts.push_back(decode_part(o.archweights, part_spec_for(c.part, prior, o.part)));
  return assemble(parts);
}

Result criterion6() {
  const RunConfig base = small_search_config(0);
  const DatasetSplit split = training_split(base);
  const auto prior = train_small_prior(base, split);

  // (a) Skip ten times cheaper than everything else, large lambda.
  LatencyTable rigged;
  for (OpKind op : kAllOps)
    for (int r = 0; r < base.part.rows; ++r)
      for (int a = 0; a < kNumWidths; ++a)
        for (int b = 0; b < kNumWidths; ++b) rigged.set({op, r, a, b}, op == OpKind::skip ? 1e-4 : 1e-3);
  int skip = 0, cells = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    RunConfig c = small_search_config(seed);
    c.search.loss.lambda = 1.0;
    c.search.epochs = 20;
    c.search.plateau_window = 20;
    const auto outs = search_all(c.part, *prior, split, &rigged, c.search_config(), "", false);
    for (const auto& o : outs) {
      for (const auto& cell : decode_cells(o.archweights, part_spec_for(c.part, prior->spec(), o.part))) {
        skip += cell.op == OpKind::skip;
        ++cells;
      }
    }
    std::clog << "[6a] seed " << seed << " skip " << skip << "/" << cells << '\n';
  }
  const double skip_rate = static_cast<double>(skip) / cells;

  // (b) Measured table; lambda 0 against 0.001 on paired seeds.
  LatencyOptions lo = base.lut_options();
  lo.reps = 30;
  lo.warmups = 3;
  const LatencyTable table = build_latency_table(base.part, lo);
  std::vector<double> cost0, cost1;
  int cheaper = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    for (double lambda : {0.0, 0.001}) {
      RunConfig c = small_search_config(seed);
      c.search.loss.lambda = lambda;
      const auto outs = search_all(c.part, *prior, split, &table, c.search_config(), "", false);
      const double cost = decoded_cost_ms(decode_outcomes(outs, c, prior->spec()), table);
      (lambda == 0.0 ? cost0 : cost1).push_back(cost);
    }
    cheaper += cost1.back() < cost0.back();
    std::clog << "[6b] seed " << seed << " cost lambda=0 " << cost0.back() << " ms, lambda=0.001 " << cost1.back()
              << " ms\n";
  }
  const double m0 = std::accumulate(cost0.begin(), cost0.end(), 0.0) / cost0.size();
  const double m1 = std::accumulate(cost1.begin(), cost1.end(), 0.0) / cost1.size();

  Result r;
  r.pass = skip_rate >= 0.9 && m0 > m1;
  r.detail = "rigged table: " + fmt(100 * skip_rate, 1) + "% skip (need >= 90); decoded cost lambda=0 " + fmt(m0, 4) +
             " ms vs lambda=0.001 " + fmt(m1, 4) + " ms (cheaper on " + std::to_string(cheaper) + "/5 seeds)";
  return r;
}

Result criterion7() {
  const Json r = cmd_spacesize(paper_config(), "");
  const double cell = r["log10_cell_max"].get<double>();
  const double total = r["log10_total"].get<double>();
  const bool exact = std::abs(cell - 63 * 8 * std::log10(5.0)) <= 1e-9 && std::abs(cell - 353.0) < 1.0;
  const bool near = std::abs(total - 1800.0) <= 180.0;
  Result out;
  out.pass = exact && near;
  out.detail = "seven-pathway cell 1e" + fmt(cell, 2) + " (" + (exact ? "matches" : "differs from") +
               " (5^8)^63); total 1e" + fmt(total, 1) + " vs 1e1800 +-10% (" + (near ? "within" : "outside") + ")";
  return out;
}

double psnr_of(const Json& report) { return report["cases"][0]["psnr"].get<double>(); }

Result criterion8() {
  std::vector<double> searched, random;
  double noisy = 0, first_pipeline = 0;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    RunConfig c = desk_config();
    c.seed = seed;
    const std::string out = fresh("c8/seed" + std::to_string(seed));
    const auto t0 = Clock::now();
    cmd_prior(c, out);
    cmd_search(c, out, true, false);
    cmd_decode(c, "", out);
    const Json rep = cmd_train(c, "", out);
    if (seed == 1) first_pipeline = seconds_since(t0);
    searched.push_back(psnr_of(rep));
    noisy = rep["cases"][0]["noisy_psnr"].get<double>();

    RunConfig cr = c;
    cr.paths.prior = fs::absolute(resolve_path(out, c.paths.prior)).string();
    const std::string rout = fresh("c8/random" + std::to_string(seed));
    cmd_decode(cr, "", rout, true);
    random.push_back(psnr_of(cmd_train(cr, "", rout)));
    std::clog << "[8] seed " << seed << " searched " << searched.back() << " dB, random " << random.back()
              << " dB, noisy " << noisy << " dB, " << seconds_since(t0) << " s\n";
  }
  const double ms = median(searched), mr = median(random);
  Result r;
  r.pass = first_pipeline <= 7200.0 && ms - noisy >= 2.0 && ms > mr;
  r.detail = "pipeline " + fmt(first_pipeline, 0) + " s (limit 7200); median searched " + fmt(ms) + " dB, random " +
             fmt(mr) + " dB, noisy " + fmt(noisy) + " dB (gain " + fmt(ms - noisy) + ", need >= 2)";
  return r;
}

Result criterion9() {
  const RunConfig c = desk_config();
  const DatasetSplit split = training_split(c);
  std::vector<PatchPair> data = split.w;
  data.insert(data.end(), split.arch.begin(), split.arch.end());
  const auto test = eval_pairs(c, c.data.noise);
  std::map<int, std::vector<double>> psnr;
  for (int variant : {1, 2}) {
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
      Rng rng(derive_seed(seed, 0x70e));
      ParamStore<float> store;
      ToyModel<float> toy(variant, 16, store, rng);
      TrainConfig tc = c.train_config();
      tc.seed = derive_seed(seed, 0x7a19);
      fit<float>(as_denoiser(toy), store.all(), data, tc);
      psnr[variant].push_back(evaluate(as_denoiser(toy), test, "toy").psnr);
      std::clog << "[9] model-" << variant << " seed " << seed << ' ' << psnr[variant].back() << " dB\n";
    }
  }
  const double m1 = median(psnr[1]), m2 = median(psnr[2]);
  Result r;
  r.pass = m2 > m1;
  r.detail = "median PSNR Model-1 " + fmt(m1) + " dB, Model-2 (concatenation) " + fmt(m2) + " dB";
  return r;
}

Result criterion10() {
  RunConfig c = desk_config();
  c.seed = 11;
  c.precision = "double";
  c.data.count = 64;
  c.prior_train.epochs = 5;
  c.search.epochs = 5;
  c.train.epochs = 3;
  c.train.warmup = 1;
  std::vector<std::string> dirs;
  for (bool parallel : {false, true}) {
    const std::string out = fresh(parallel ? "c10/parallel" : "c10/sequential");
    cmd_prior(c, out);
    cmd_search(c, out, parallel, false);
    cmd_decode(c, "", out);
    cmd_train(c, "", out);
    dirs.push_back(out);
  }
  std::vector<std::string> files = {"prior.json", "arch.json", "model.json"};
  for (int i = 0; i < 3; ++i) files.push_back("search/part" + std::to_string(i) + "/archweights.json");
  int same = 0;
  std::string differing;
  for (const auto& f : files) {
    if (read_text(dirs[0] + "/" + f) == read_text(dirs[1] + "/" + f)) {
      ++same;
    } else {
      differing += " " + f;
    }
  }
  Result r;
  r.pass = same == static_cast<int>(files.size());
  r.detail = std::to_string(same) + "/" + std::to_string(files.size()) +
             " artifacts byte-identical between a sequential and a parallel 64-bit run" +
             (differing.empty() ? "" : "; differ:" + differing);
  return r;
}

}  // namespace

int main(int argc, char** argv) {
  const std::map<int, std::function<Result()>> criteria = {
      {1, criterion1}, {2, criterion2}, {3, criterion3}, {4, criterion4},  {5, criterion5},
      {6, criterion6}, {7, criterion7}, {8, criterion8}, {9, criterion9}, {10, criterion10},
  };
  std::vector<int> selected;
  for (int i = 1; i < argc; ++i) selected.push_back(std::atoi(argv[i]));
  if (selected.empty()) {
    for (const auto& [k, v] : criteria) selected.push_back(k);
  }
  fs::create_directories(work_root());
  int failed = 0;
  for (int k : selected) {
    const auto it = criteria.find(k);
    if (it == criteria.end()) {
      std::cerr << "no criterion " << k << '\n';
      return 2;
    }
    const auto t0 = Clock::now();
    Result r;
    try {
      r = it->second();
    } catch (const std::exception& e) {
      r = {false, std::string("error: ") + e.what()};
    }
    failed += !r.pass;
    std::cout << "criterion " << k << ": " << (r.pass ? "PASS" : "FAIL") << "  " << r.detail << "  [" << fmt(seconds_since(t0), 0)
              << " s]" << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
