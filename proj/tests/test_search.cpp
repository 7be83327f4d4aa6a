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

#include "denas/search.hpp"

#include <cmath>
#include <filesystem>

#include "denas/io.hpp"
#include "denas/ops.hpp"
#include "doctest.h"

using namespace denas;

namespace {

PartSpec toy_base() {
  PartSpec s;
  s.rows = 2;
  s.cells_per_row = 3;
  return s;
}

struct Fixture {
  DatasetSplit split;
  std::unique_ptr<PriorModel<double>> prior;

  explicit Fixture(std::uint64_t seed = 3, int count = 16) {
    const auto corpus = procedural_corpus(4, 32, seed);
    DataConfig dc;
    dc.patch = 16;
    dc.count = count;
    dc.seed = seed;
    split = make_dataset(corpus, dc);
    Rng rng(seed + 100);
    prior = std::make_unique<PriorModel<double>>(PriorSpec{16, 1, 3}, rng);
    prior->freeze();
  }
};

SearchConfig quick_config(std::uint64_t seed) {
  SearchConfig c;
  c.epochs = 3;
  c.batch = 4;
  c.lr_w = 1e-3;
  c.lr_arch = 1e-2;
  c.seed = seed;
  return c;
}

LatencyTable synthetic_table(const PartSpec& spec, double scale) {
  LatencyTable t;
  for (OpKind k : kAllOps) {
    for (int r = 0; r < spec.rows; ++r) {
      for (int a = 0; a < kNumWidths; ++a) {
        for (int b = 0; b < kNumWidths; ++b) {
          t.set({k, r, a, b}, scale * (1 + static_cast<int>(k)) * (r + 1) * (10 - a - b) * 1e-5);
        }
      }
    }
  }
  return t;
}

std::string fresh_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("denas_test_" + name);
  std::filesystem::remove_all(p);
  return p.string();
}

}  // namespace

TEST_CASE("search config validation and annealing") {
  SearchConfig c;
  CHECK_NOTHROW(c.validate());
  CHECK(c.tau(0) == 5.0);
  CHECK(c.tau(c.epochs - 1) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(c.tau(c.epochs / 2) < c.tau(0));
  c.lr_arch = 0;
  CHECK_THROWS_AS(c.validate(), Error);
  c = SearchConfig{};
  c.parts = 4;
  CHECK_THROWS_AS(c.validate(), Error);
  CHECK(parse_alternation("epoch") == Alternation::epoch);
  CHECK_THROWS_AS(parse_alternation("never"), Error);
}

TEST_CASE("part inputs chain through the prior") {
  Fixture f;
  const auto d0 = prepare_part_data(*f.prior, f.split, 0);
  const auto d1 = prepare_part_data(*f.prior, f.split, 1);
  const auto d2 = prepare_part_data(*f.prior, f.split, 2);
  REQUIRE(d1.w_in.size() == f.split.w.size());
  REQUIRE(d1.arch_in.size() == f.split.arch.size());
  for (std::size_t i = 0; i < f.split.w.size(); ++i) {
    const auto feats = f.prior->features(f.split.w[i].noisy);
    CHECK(d0.w_in[i].storage() == feats[0].storage());
    CHECK(d1.w_in[i].storage() == feats[1].storage());
    CHECK(d1.w_in[i].storage() == d0.w_target[i].storage());
    CHECK(d2.w_in[i].storage() == d1.w_target[i].storage());
    CHECK(d2.w_target[i].storage() == feats[3].storage());
  }
  const PartSpec s1 = part_spec_for(toy_base(), f.prior->spec(), 1);
  CHECK(s1.in_channels == 16);
  CHECK(s1.out_channels == 16);
  CHECK(part_spec_for(toy_base(), f.prior->spec(), 2).out_channels == 3);
}

TEST_CASE("update partitioning") {
  Fixture f;
  const PartSpec spec = part_spec_for(toy_base(), f.prior->spec(), 0);
  const auto data = prepare_part_data(*f.prior, f.split, 0);
  PartSearch<double> s(0, spec, quick_config(1));
  const Tensor<double>& x = data.w_in[0];
  const Tensor<double>& y = data.w_target[0];

  const auto w0 = s.supernet().weights().checksum();
  const auto a0 = s.arch().store().checksum();
  EpochMetrics m;
  s.arch_step(x, y, nullptr, m, 1.0);
  CHECK(s.supernet().weights().checksum() == w0);
  const auto a1 = s.arch().store().checksum();
  CHECK(a1 != a0);

  s.weight_step(x, y, 1.0);
  CHECK(s.arch().store().checksum() == a1);
  CHECK(s.supernet().weights().checksum() != w0);
  for (auto* p : s.supernet().weights().all()) CHECK(p->trainable());
  for (auto* p : s.arch().store().all()) CHECK(p->trainable());
}

TEST_CASE("lambda zero never reads the latency table") {
  Fixture f;
  const PartSpec spec = part_spec_for(toy_base(), f.prior->spec(), 0);
  const auto data = prepare_part_data(*f.prior, f.split, 0);
  const LatencyTable ta = synthetic_table(spec, 1.0);
  const LatencyTable tb = synthetic_table(spec, 7.0);
  auto run = [&](const LatencyTable* t) {
    PartSearch<double> s(0, spec, quick_config(5));
    s.alternate_epoch(data, t);
    return std::pair{s.supernet().weights().checksum(), s.arch().store().checksum()};
  };
  const auto none = run(nullptr);
  CHECK(run(&ta) == none);
  CHECK(run(&tb) == none);

  SearchConfig c = quick_config(5);
  c.loss.lambda = 0.5;
  PartSearch<double> s(0, spec, c);
  CHECK_THROWS_AS(s.alternate_epoch(data, nullptr), Error);
  const auto m = s.alternate_epoch(data, &ta);
  CHECK(m.l_comp > 0);
  CHECK(m.l_search == doctest::Approx(m.l_dp + 0.5 * m.l_comp).epsilon(1e-12));
}

TEST_CASE("single-op search favours the operator that fits") {
  // One cell, target = input: skip is exact, every other candidate is a
  // random map. The arch logits alone are trained.
  Rng rng(11);
  ParamStore<double> store;
  std::vector<std::unique_ptr<Operator<double>>> owned;
  std::vector<const Operator<double>*> ops;
  for (OpKind k : {OpKind::conv_d1, OpKind::skip, OpKind::conv_r}) {
    owned.push_back(std::make_unique<Operator<double>>(k, 8, 8, store, std::string(op_name(k)), rng));
    ops.push_back(owned.back().get());
  }
  store.set_trainable(false);
  ParamStore<double> arch;
  Parameter<double>& alpha = arch.add("alpha", Tensor<double>(Shape{1, 3, 1, 1}));
  Adam<double> opt(arch.all());
  const Tensor<double> x = Tensor<double>::randn(Shape{2, 8, 8, 8}, rng);
  const double start = softmax_of({0, 0, 0})[1];
  double prev = start;
  for (int step = 0; step < 50; ++step) {
    arch.zero_grad();
    Graph<double> g;
    std::vector<double> logits(alpha.value().storage().begin(), alpha.value().storage().end());
    const Draw d = gumbel_argmax(logits, rng);
    Var<double> in = g.input(x);
    Var<double> y = cell_forward_sampled(g, in, ops, g.param(alpha), d, 1.0, CellStrategy::single_op, 8);
    g.backward(mse_loss(y, in));
    opt.step(0.05);
    const auto& v = alpha.value().storage();
    const double now = softmax_of({v[0], v[1], v[2]})[1];
    CHECK(now >= prev);
    prev = now;
  }
  const double mass = prev;
  MESSAGE("skip mass " << start << " -> " << mass);
  CHECK(mass > start + 0.2);
}

TEST_CASE("search lowers L_dp across seeds") {
  // Sampled sub-networks make the per-epoch mean noisy; compare the arch-split
  // loss under one fixed set of draws instead.
  Fixture f(7, 32);
  const PartSpec spec = part_spec_for(toy_base(), f.prior->spec(), 0);
  const auto data = prepare_part_data(*f.prior, f.split, 0);
  auto held_out = [&](PartSearch<double>& s) {
    Rng draws(99);
    double total = 0;
    for (int rep = 0; rep < 4; ++rep) {
      for (std::size_t i = 0; i < data.arch_in.size(); ++i) {
        Graph<double> g;
        ForwardOptions fo;
        Var<double> y = s.supernet().forward(g, g.input(data.arch_in[i]), s.arch(), draws, fo);
        total += mse_loss(y, g.input(data.arch_target[i])).value()[0];
      }
    }
    return total / (4.0 * data.arch_in.size());
  };
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    SearchConfig c = quick_config(seed);
    c.epochs = 8;
    PartSearch<double> s(0, spec, c);
    const double first = held_out(s);
    for (int e = 0; e < c.epochs; ++e) CHECK(std::isfinite(s.alternate_epoch(data, nullptr).l_dp));
    const double last = held_out(s);
    CAPTURE(seed);
    MESSAGE("seed " << seed << ": " << first << " -> " << last);
    CHECK(last < first);
  }
}

TEST_CASE("plateau stops the search early") {
  Fixture f;
  SearchConfig c = quick_config(2);
  c.epochs = 10;
  c.plateau_window = 1;
  c.plateau_tol = 1e9;
  c.parts = 1;
  const auto out = search_part(0, toy_base(), *f.prior, f.split, nullptr, c);
  CHECK(out.finished);
  CHECK(out.history.size() == 2);
}

TEST_CASE("parallel, sequential and resumed runs agree") {
  Fixture f;
  SearchConfig c = quick_config(9);
  const std::string seq_dir = fresh_dir("seq");
  const std::string par_dir = fresh_dir("par");
  const std::string res_dir = fresh_dir("res");
  const auto prior_sum = f.prior->weights().checksum();
  const auto seq = search_all(toy_base(), *f.prior, f.split, nullptr, c, seq_dir, false);
  const auto par = search_all(toy_base(), *f.prior, f.split, nullptr, c, par_dir, true, 3);
  REQUIRE(seq.size() == 3);
  REQUIRE(par.size() == 3);
  for (int i = 0; i < 3; ++i) {
    CHECK(seq[i].part == i);
    CHECK(par[i].part == i);
    CHECK(seq[i].finished);
    CHECK(seq[i].archweights.dump() == par[i].archweights.dump());
    CHECK(read_text(seq_dir + "/part" + std::to_string(i) + "/metrics.csv") ==
          read_text(par_dir + "/part" + std::to_string(i) + "/metrics.csv"));
    for (const auto& m : seq[i].history) {
      CHECK(std::isfinite(m.l_dp));
      CHECK(std::isfinite(m.l_search));
    }
    CHECK(file_exists(seq_dir + "/part" + std::to_string(i) + "/archweights.json"));
  }
  CHECK(seq[0].archweights.dump() != seq[1].archweights.dump());
  CHECK(f.prior->weights().checksum() == prior_sum);

  SearchConfig stop = c;
  stop.stop_after = 1;
  const auto partial = search_part(1, toy_base(), *f.prior, f.split, nullptr, stop, res_dir);
  CHECK_FALSE(partial.finished);
  CHECK(partial.history.size() == 1);
  CHECK_FALSE(file_exists(res_dir + "/part1/archweights.json"));
  const auto resumed = search_part(1, toy_base(), *f.prior, f.split, nullptr, c, res_dir);
  CHECK(resumed.finished);
  CHECK(resumed.archweights.dump() == seq[1].archweights.dump());
  CHECK(read_text(res_dir + "/part1/metrics.csv") == read_text(seq_dir + "/part1/metrics.csv"));

  SearchConfig other = c;
  other.lr_w = 5e-3;
  CHECK_THROWS_AS(search_part(1, toy_base(), *f.prior, f.split, nullptr, other, res_dir), Error);
}

TEST_CASE("thread budget honours DENAS_THREADS") {
  setenv("DENAS_THREADS", "2", 1);
  CHECK(thread_budget() == 2);
  setenv("DENAS_THREADS", "zero", 1);
  CHECK(thread_budget() >= 1);
  unsetenv("DENAS_THREADS");
}
