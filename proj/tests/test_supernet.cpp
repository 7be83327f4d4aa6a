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

#include "denas/supernet.hpp"

#include <cmath>

#include "doctest.h"
#include "helpers.hpp"
#include "oracles.hpp"

using namespace denas;
using testing::Bag;
using testing::D;
using testing::fd_error;
using testing::probe;

namespace {

Var<D> vec(Graph<D>& g, std::vector<D> v, bool grad = false) {
  const int k = static_cast<int>(v.size());
  return g.input(Tensor<D>(Shape{1, k, 1, 1}, std::move(v)), grad);
}

PartSpec small_spec() {
  PartSpec s;
  s.rows = 2;
  s.cells_per_row = 3;
  s.base_width = 16;
  s.in_channels = 3;
  s.out_channels = 3;
  s.zoo.window = 4;
  return s;
}

std::vector<const Operator<D>*> menu(const std::vector<std::unique_ptr<Operator<D>>>& ops) {
  std::vector<const Operator<D>*> out;
  for (const auto& o : ops) out.push_back(o.get());
  return out;
}

}  // namespace

TEST_CASE("diamond geometry") {
  PartSpec desk;
  auto cells = part_geometry(desk);
  REQUIRE(cells.size() == 6);
  CHECK(cells[0].row == 0);
  CHECK(cells[0].layer == 0);
  CHECK(cells[0].history == std::vector<int>{-1});
  CHECK(cells[2].row == 1);
  CHECK(cells[2].layer == 1);
  CHECK_FALSE(cells[2].has[1]);
  CHECK(cells[2].has[2]);
  const auto& last = cells.back();
  CHECK(last.row == 0);
  CHECK(last.layer == 3);
  CHECK(last.has[0]);
  CHECK(last.has[1]);
  CHECK_FALSE(last.has[2]);
  CHECK(last.history == std::vector<int>{-1, 0, 1, 2});

  PartSpec full;
  full.rows = 3;
  full.cells_per_row = 6;
  auto pc = part_geometry(full);
  CHECK(pc.size() == 12);
  // The output cell has seven incoming pathways.
  const auto& out = pc.back();
  CHECK(out.history.size() + out.has[0] + out.has[2] == 7);

  PartSpec bad;
  bad.rows = 3;
  bad.cells_per_row = 4;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = PartSpec{};
  bad.base_width = 24;
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("architecture weight normalization") {
  Rng rng(1);
  ArchWeights<D> arch(PartSpec{}, rng);
  for (std::size_t i = 0; i < arch.size(); ++i) {
    const auto& c = arch.cell(static_cast<int>(i));
    const auto& geo = arch.geometry()[i];
    std::vector<double> b(c.beta->value().storage().begin(), c.beta->value().storage().end());
    auto nb = normalized_beta(b, geo.has);
    double s = 0;
    for (int k = 0; k < kNumPaths; ++k) {
      if (!geo.has[k]) CHECK(nb[k] == 0.0);
      s += nb[k];
    }
    CHECK(std::abs(s - 1.0) <= 1e-12);
    for (auto* p : {c.alpha, c.gamma, c.delta}) {
      if (p == nullptr) continue;
      std::vector<double> v(p->value().storage().begin(), p->value().storage().end());
      double t = 0;
      for (double x : softmax_of(v)) t += x;
      CHECK(std::abs(t - 1.0) <= 1e-12);
    }
  }
  auto j = arch.to_json();
  Rng rng2(2);
  ArchWeights<D> other(PartSpec{}, rng2);
  other.load_json(j);
  CHECK(other.to_json().dump() == j.dump());
  CHECK(other.store().checksum() == arch.store().checksum());
}

TEST_CASE("aggregate_resolution") {
  Rng rng(2);
  Graph<D> g;
  const Shape s{2, 4, 3, 3};
  Var<D> up = g.input(Tensor<D>::randn(s, rng));
  Var<D> same = g.input(Tensor<D>::randn(s, rng));
  Var<D> down = g.input(Tensor<D>::randn(s, rng));
  Var<D> zero = g.input(Tensor<D>(s));

  auto onehot = aggregate_resolution<D>({up, same, down}, vec(g, {-1000, 0, -1000}));
  CHECK(onehot.value().storage() == same.value().storage());

  auto third = aggregate_resolution<D>({zero, same, zero}, vec(g, {0, 0, 0}));
  for (std::size_t i = 0; i < third.value().size(); ++i) {
    CHECK(third.value()[i] == doctest::Approx(same.value()[i] / 3.0).epsilon(1e-14));
  }

  auto w = oracle::softmax({1, 2, 3});
  CHECK(w[0] == doctest::Approx(0.0900).epsilon(1e-3));
  CHECK(w[1] == doctest::Approx(0.2447).epsilon(1e-3));
  CHECK(w[2] == doctest::Approx(0.6652).epsilon(1e-3));
  auto mix = aggregate_resolution<D>({up, same, down}, vec(g, {1, 2, 3}));
  for (std::size_t i = 0; i < mix.value().size(); ++i) {
    const double ref = w[0] * up.value()[i] + w[1] * same.value()[i] + w[2] * down.value()[i];
    CHECK(std::abs(mix.value()[i] - ref) <= 1e-6);
  }

  // Boundary rows renormalize over the present candidates.
  auto two = aggregate_resolution<D>({std::nullopt, same, down}, vec(g, {5, 2, 3}));
  auto w2 = oracle::softmax({2, 3});
  for (std::size_t i = 0; i < two.value().size(); ++i) {
    CHECK(std::abs(two.value()[i] - (w2[0] * same.value()[i] + w2[1] * down.value()[i])) <= 1e-12);
  }
  auto single = aggregate_resolution<D>({std::nullopt, same, std::nullopt}, vec(g, {5, 2, 3}));
  CHECK(single.value().storage() == same.value().storage());

  CHECK_THROWS_AS(aggregate_resolution<D>({std::nullopt, std::nullopt, std::nullopt}, vec(g, {0, 0, 0})), Error);
  Var<D> wrong = g.input(Tensor<D>(Shape{2, 5, 3, 3}));
  CHECK_THROWS_AS(aggregate_resolution<D>({wrong, same, std::nullopt}, vec(g, {0, 0, 0})), Error);
}

TEST_CASE("aggregate_dense") {
  Rng rng(3);
  Graph<D> g;
  Var<D> a = g.input(Tensor<D>::randn(Shape{1, 4, 2, 2}, rng));
  Var<D> b = g.input(Tensor<D>::randn(Shape{1, 8, 2, 2}, rng));

  auto single = aggregate_dense<D>({a}, vec(g, {0.3}), 4);
  CHECK(single.value().storage() == a.value().storage());

  auto fixed = aggregate_dense<D>({b, b}, vec(g, {0.0, 0.0}), 8);
  for (std::size_t i = 0; i < fixed.value().size(); ++i) {
    CHECK(fixed.value()[i] == doctest::Approx(b.value()[i]).epsilon(1e-15));
  }

  auto w = oracle::softmax({0.4, -0.2});
  auto mixed = aggregate_dense<D>({a, b}, vec(g, {0.4, -0.2}), 6);
  REQUIRE(mixed.shape() == (Shape{1, 6, 2, 2}));
  for (int c = 0; c < 6; ++c)
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j) {
        const double pa = c < 4 ? a.value().at(0, c, i, j) : 0.0;
        const double ref = w[0] * pa + w[1] * b.value().at(0, c, i, j);
        CHECK(std::abs(mixed.value().at(0, c, i, j) - ref) <= 1e-12);
      }

  CHECK_THROWS_AS(aggregate_dense<D>({}, vec(g, {0.0}), 4), Error);
  CHECK_THROWS_AS(aggregate_dense<D>({a}, vec(g, {0.0, 1.0}), 4), Error);
}

TEST_CASE("aggregate_dense keeps leading channels intact") {
  for (int seed = 0; seed < 20; ++seed) {
    Rng rng(50 + seed);
    Graph<D> g;
    const int ca = 1 + seed % 7;
    const int u = 1 + (seed * 3) % 9;
    Var<D> a = g.input(Tensor<D>::randn(Shape{1, ca, 2, 2}, rng));
    auto y = aggregate_dense<D>({a}, vec(g, {0.0}), u);
    for (int c = 0; c < u; ++c)
      for (int i = 0; i < 4; ++i) {
        CHECK(y.value()[c * 4 + i] == (c < ca ? a.value()[c * 4 + i] : 0.0));
      }
  }
}

TEST_CASE("darts cell: analytic mixture and alpha gradient") {
  Rng rng(4);
  ParamStore<D> store;
  std::vector<std::unique_ptr<Operator<D>>> pair;
  pair.push_back(std::make_unique<Operator<D>>(OpKind::skip, 4, 4, store, "id", rng));
  pair.push_back(std::make_unique<Operator<D>>(OpKind::conv_d1, 4, 4, store, "twice", rng));
  auto& w = store.at("twice/w").value();
  w.fill(0.0);
  for (int c = 0; c < 4; ++c) w.at(c, c, 1, 1) = 2.0;
  Graph<D> g;
  Var<D> x = g.input(Tensor<D>::uniform(Shape{1, 4, 3, 3}, rng, 0.1, 1.0));
  auto y = cell_forward_darts(g, x, menu(pair), vec(g, {0.0, 0.0}), 4);
  for (std::size_t i = 0; i < y.value().size(); ++i) {
    CHECK(y.value()[i] == doctest::Approx(1.5 * x.value()[i]).epsilon(1e-14));
  }
  auto sat = cell_forward_darts(g, x, menu(pair), vec(g, {0.0, 40.0}), 4);
  for (std::size_t i = 0; i < sat.value().size(); ++i) {
    CHECK(std::abs(sat.value()[i] - 2.0 * x.value()[i]) <= 1e-6);
  }
  CHECK_THROWS_AS(cell_forward_darts(g, x, menu(pair), vec(g, {0.0, 0.0, 0.0}), 4), Error);
}

TEST_CASE("darts cell: autodiff equals the closed-form alpha gradient") {
  for (int seed = 0; seed < 5; ++seed) {
    Rng rng(60 + seed);
    ParamStore<D> store;
    ZooOptions opt;
    opt.window = 4;
    std::vector<std::unique_ptr<Operator<D>>> ops;
    for (auto k : kAllOps) {
      ops.push_back(std::make_unique<Operator<D>>(k, 8, 8, store, std::string(op_name(k)), rng, opt));
    }
    Tensor<D> xv = Tensor<D>::randn(Shape{1, 8, 4, 4}, rng);
    std::vector<D> logits(kNumOps);
    for (auto& v : logits) v = rng.normal();

    Graph<D> g;
    Var<D> alpha = vec(g, logits, true);
    Var<D> y = cell_forward_darts(g, g.input(xv), menu(ops), alpha, 6);
    g.backward(probe(g, y, 7));
    const auto gy = g.grad(y);
    const auto ga = g.grad(alpha);

    std::vector<Tensor<D>> outs;
    for (const auto& op : ops) {
      Graph<D> h;
      outs.push_back(op->apply_slim(h, h.input(xv), 6).value());
    }
    const auto abar = oracle::softmax(std::vector<double>(logits.begin(), logits.end()));
    for (int i = 0; i < kNumOps; ++i) {
      double closed = 0;
      for (std::size_t e = 0; e < gy.size(); ++e) {
        double inner = 0;
        for (int m = 0; m < kNumOps; ++m) {
          if (m != i) inner += (outs[i][e] - outs[m][e]) * abar[m];
        }
        closed += gy[e] * abar[i] * inner;
      }
      CHECK(std::abs(ga[i] - closed) <= 1e-10);
    }
  }
}

TEST_CASE("sampled cell: forward is the sampled operator") {
  Rng rng(5);
  ParamStore<D> store;
  ZooOptions opt;
  opt.window = 4;
  std::vector<std::unique_ptr<Operator<D>>> ops;
  for (auto k : kAllOps) ops.push_back(std::make_unique<Operator<D>>(k, 8, 8, store, std::string(op_name(k)), rng, opt));
  Tensor<D> xv = Tensor<D>::randn(Shape{1, 8, 4, 4}, rng);
  for (auto mode : {CellStrategy::single_op, CellStrategy::gdas}) {
    for (int trial = 0; trial < 16; ++trial) {
      Graph<D> g;
      Var<D> alpha = vec(g, std::vector<D>(kNumOps, 0.0), true);
      Draw d = gumbel_argmax(std::vector<double>(kNumOps, 0.0), rng);
      Var<D> y = cell_forward_sampled(g, g.input(xv), menu(ops), alpha, d, 1.0, mode, 6);
      Graph<D> h;
      auto ref = ops[d.index]->apply_slim(h, h.input(xv), 6).value();
      CHECK(y.value().storage() == ref.storage());
    }
  }
  Graph<D> g;
  Draw d;
  CHECK_THROWS_AS(cell_forward_sampled(g, g.input(xv), menu(ops), vec(g, std::vector<D>(8, 0.0)), d, 0.0,
                                       CellStrategy::single_op, 8),
                  Error);
}

TEST_CASE("single-op estimator: gradient direction for uniform alpha") {
  Rng rng(6);
  ParamStore<D> store;
  std::vector<std::unique_ptr<Operator<D>>> ops;
  for (auto k : {OpKind::conv_d1, OpKind::conv_r, OpKind::HIN}) {
    ops.push_back(std::make_unique<Operator<D>>(k, 4, 4, store, std::string(op_name(k)), rng));
  }
  Graph<D> g;
  Var<D> alpha = vec(g, {0.0, 0.0, 0.0}, true);
  Draw d;
  d.index = 0;
  Var<D> y = cell_forward_sampled(g, g.input(Tensor<D>::randn(Shape{1, 4, 4, 4}, rng)), menu(ops), alpha,
                                  d, 1.0, CellStrategy::single_op, 4);
  Var<D> loss = probe(g, y, 9);
  g.backward(loss);
  const auto gy = g.grad(y);
  double score = 0;
  for (std::size_t i = 0; i < gy.size(); ++i) score += gy[i] * y.value()[i];
  const auto ga = g.grad(alpha);
  CHECK(ga[0] == doctest::Approx(score * 2.0 / 3.0).epsilon(1e-12));
  CHECK(ga[1] == doctest::Approx(-score / 3.0).epsilon(1e-12));
  CHECK(ga[2] == doctest::Approx(-score / 3.0).epsilon(1e-12));
}

TEST_CASE("gradient sparsity: single-op versus GDAS") {
  Rng rng(7);
  ParamStore<D> store;
  ZooOptions opt;
  opt.window = 4;
  std::vector<std::unique_ptr<Operator<D>>> ops;
  for (auto k : kAllOps) ops.push_back(std::make_unique<Operator<D>>(k, 8, 8, store, std::string(op_name(k)), rng, opt));
  Tensor<D> xv = Tensor<D>::randn(Shape{1, 8, 4, 4}, rng);
  Draw d = gumbel_argmax(std::vector<double>(kNumOps, 0.0), rng);

  auto run = [&](CellStrategy mode) {
    store.zero_grad();
    Graph<D> g;
    Var<D> alpha = vec(g, {0.1, -0.2, 0.3, 0.0, 0.2, -0.1, 0.05, 0.15}, true);
    Var<D> y = cell_forward_sampled(g, g.input(xv), menu(ops), alpha, d, 1.0, mode, 8);
    g.backward(probe(g, y, 10));
    return g.grad(alpha).storage();
  };

  const auto single = run(CellStrategy::single_op);
  for (int i = 0; i < kNumOps; ++i) {
    for (auto* p : ops[i]->params()) {
      if (i == d.index) continue;
      CHECK_FALSE(p->has_grad());
      for (D v : p->grad().values()) CHECK(v == 0.0);
    }
  }
  const auto gdas = run(CellStrategy::gdas);
  for (D v : gdas) CHECK(v != 0.0);

  // Perturbing an unsampled operator changes the GDAS alpha gradient but
  // not the single-op one.
  const int other = (d.index + 1) % kNumOps == static_cast<int>(OpKind::skip) ? (d.index + 2) % kNumOps
                                                                             : (d.index + 1) % kNumOps;
  for (auto* p : ops[other]->params()) {
    for (auto& v : p->value().values()) v *= 1.5;
  }
  CHECK(run(CellStrategy::single_op) == single);
  CHECK(run(CellStrategy::gdas) != gdas);
}

TEST_CASE("Gumbel-argmax frequencies match softmax") {
  Rng rng(8);
  const std::vector<double> alpha{1.0, 0.0, -1.0};
  const auto p = oracle::softmax(alpha);
  std::vector<int> counts(3, 0);
  const int n = 100000;
  for (int i = 0; i < n; ++i) ++counts[gumbel_argmax(alpha, rng).index];
  for (int k = 0; k < 3; ++k) CHECK(std::abs(counts[k] / double(n) - p[k]) <= 0.01);
}

TEST_CASE("single-op estimator is unbiased on a linear toy") {
  // L(y) = <c, y>, O_i fixed; E_i~softmax[L(O_i)] has gradient
  // sum_i L_i s_i (1[i=j] - s_j).
  Rng rng(9);
  const std::vector<double> logits{0.5, -0.3, 0.1};
  const std::vector<double> values{1.0, 2.0, 4.0};
  const auto s = oracle::softmax(logits);
  std::vector<double> exact(3, 0.0);
  for (int j = 0; j < 3; ++j)
    for (int i = 0; i < 3; ++i) exact[j] += values[i] * s[i] * ((i == j) - s[j]);

  std::vector<double> mean(3, 0.0);
  const int n = 40000;
  for (int t = 0; t < n; ++t) {
    Graph<D> g;
    Var<D> alpha = vec(g, logits, true);
    Draw d = gumbel_argmax(logits, rng);
    Var<D> out = g.input(Tensor<D>(Shape{1, 1, 1, 1}, values[d.index]));
    g.backward(sum(score_gate(out, alpha, d.index)));
    for (int j = 0; j < 3; ++j) mean[j] += g.grad(alpha)[j] / n;
  }
  double err = 0, norm = 0;
  for (int j = 0; j < 3; ++j) {
    err += (mean[j] - exact[j]) * (mean[j] - exact[j]);
    norm += exact[j] * exact[j];
  }
  CHECK(std::sqrt(err) <= 0.05 * std::sqrt(norm));
}

TEST_CASE("kernel_forward") {
  Rng rng(10);
  ParamStore<D> store;
  auto& k = store.add("k", init_kernel<D>(64, 64, 3, rng));
  Tensor<D> xv = Tensor<D>::randn(Shape{1, 64, 5, 5}, rng);
  {
    Graph<D> g;
    Var<D> hot = vec(g, {1e3, 0, 0, 0, 0});
    Var<D> x = g.input(xv);
    auto y = kernel_forward<D>(g, x, k, hot, hot, rng, 1.0);
    auto ref = conv2d(x, g.param(k), std::optional<Var<D>>(), 1, 1, 1);
    CHECK(y.value().storage() == ref.value().storage());
  }
  {
    Graph<D> g;
    auto y = kernel_forward<D>(g, g.input(xv), k, vec(g, {1e3, 0, 0, 0, 0}), vec(g, {0, 0, 0, 0, 1e3}), rng, 1.0);
    CHECK(y.shape().c == 32);
  }
  {
    std::vector<int> counts(kNumWidths, 0);
    const int n = 10000;
    for (int t = 0; t < n; ++t) {
      Graph<D> g;
      int ip = -1, ic = -1;
      kernel_forward<D>(g, g.input(Tensor<D>(Shape{1, 64, 1, 1})), k, std::nullopt,
                        vec(g, {0, 0, 0, 0, 0}), rng, 1.0, &ip, &ic);
      CHECK(ip == 0);
      ++counts[ic];
    }
    for (int c : counts) CHECK(std::abs(c / double(n) - 0.2) <= 0.02);
  }
  {
    Graph<D> g;
    CHECK_THROWS_AS(kernel_forward<D>(g, g.input(Tensor<D>(Shape{1, 40, 3, 3})), k, std::nullopt,
                                      vec(g, {0, 0, 0, 0, 0}), rng, 1.0),
                    Error);
  }
}

TEST_CASE("part forward: all-skip single row yields the stem") {
  PartSpec spec;
  spec.rows = 1;
  spec.cells_per_row = 2;
  spec.out_channels = 16;
  Rng rng(11);
  Supernet<D> net(spec, rng);
  ArchWeights<D> arch(spec, rng);
  std::vector<CellSample> forced(2, CellSample{static_cast<int>(OpKind::skip), 0});
  ForwardOptions fo;
  fo.forced = &forced;
  Graph<D> g;
  Var<D> x = g.input(Tensor<D>::randn(Shape{2, 3, 8, 8}, rng));
  Var<D> y = net.forward(g, x, arch, rng, fo);
  Var<D> stem = conv2d(x, g.param(net.weights().at("stem/w")),
                       std::optional<Var<D>>(g.param(net.weights().at("stem/b"))), 1, 1, 1);
  CHECK(max_abs_diff(y.value(), stem.value()) <= 1e-14);
}

TEST_CASE("part forward: shape law, replay and live weights") {
  const PartSpec spec = small_spec();
  Rng init(12);
  Supernet<D> net(spec, init);
  ArchWeights<D> arch(spec, init, 0.5);
  Tensor<D> xv = Tensor<D>::randn(Shape{2, 3, 8, 8}, init);
  for (auto mode : {CellStrategy::single_op, CellStrategy::gdas, CellStrategy::darts}) {
    ForwardOptions fo;
    fo.strategy = mode;
    for (int seed = 0; seed < 4; ++seed) {
      std::vector<CellSample> s1, s2;
      Rng r1(seed), r2(seed);
      Graph<D> g1, g2;
      Var<D> y1 = net.forward(g1, g1.input(xv), arch, r1, fo, &s1);
      Var<D> y2 = net.forward(g2, g2.input(xv), arch, r2, fo, &s2);
      CHECK(y1.shape() == xv.shape());
      CHECK(s1 == s2);
      CHECK(y1.value().storage() == y2.value().storage());
    }
  }
  // Every multi-entry weight vector receives a gradient. Sampling the
  // narrowest width, or a skip that copies the stem into two history
  // entries, legitimately zeroes gamma or delta, so both are pinned here.
  arch.store().zero_grad();
  std::vector<CellSample> pinned(arch.size(), CellSample{0, 1});
  ForwardOptions fo;
  fo.strategy = CellStrategy::darts;
  fo.forced = &pinned;
  Rng r(3);
  Graph<D> g;
  g.backward(probe(g, net.forward(g, g.input(xv), arch, r, fo), 11));
  for (std::size_t i = 0; i < arch.size(); ++i) {
    const auto& c = arch.cell(static_cast<int>(i));
    const auto& geo = arch.geometry()[i];
    auto nonzero = [](const Parameter<D>* p) {
      double s = 0;
      for (D v : p->grad().values()) s += std::abs(v);
      return s > 0.0;
    };
    CHECK(nonzero(c.alpha));
    CHECK(nonzero(c.gamma));
    if (geo.num_present() > 1) CHECK(nonzero(c.beta));
    if (geo.history.size() > 1) CHECK(nonzero(c.delta));
  }
}

TEST_CASE("fd: full supernet part") {
  const PartSpec spec = small_spec();
  for (int seed = 0; seed < 20; ++seed) {
    Rng init(500 + seed);
    Supernet<D> net(spec, init);
    ArchWeights<D> arch(spec, init, 0.5);
    Tensor<D> xv = Tensor<D>::randn(Shape{1, 3, 8, 8}, init);
    std::vector<CellSample> forced;
    for (std::size_t c = 0; c < arch.size(); ++c) {
      forced.push_back(CellSample{init.uniform_int(0, kNumOps), init.uniform_int(0, kNumWidths)});
    }
    ForwardOptions fo;
    fo.forced = &forced;
    fo.strategy = seed % 2 == 0 ? CellStrategy::darts : CellStrategy::single_op;
    auto params = net.weights().all();
    for (std::size_t c = 0; c < arch.size(); ++c) {
      const auto& a = arch.cell(static_cast<int>(c));
      params.push_back(a.beta);
      if (a.delta) params.push_back(a.delta);
      if (fo.strategy == CellStrategy::darts) params.push_back(a.alpha);
    }
    auto f = [&](Graph<D>& g) {
      Rng unused(0);
      return probe(g, net.forward(g, g.input(xv), arch, unused, fo), 12);
    };
    // Some entries have exactly zero gradient (the HIN bias ahead of its
    // instance norm, delta over identical history maps); a 1e-7 floor keeps
    // their rounding noise, about 1e-11 times the loss, out of the ratio.
    FdOptions opt;
    opt.max_entries = 2;
    opt.abs_floor = 1e-7;
    INFO("seed " << seed);
    CHECK(finite_difference_check<D>(f, params, opt).max_rel_error <= 1e-4);
  }
}

TEST_CASE("search-space size estimate") {
  CHECK(cell_space_log10(7) == doctest::Approx(63 * 8 * std::log10(5.0)).epsilon(1e-15));
  CHECK(std::abs(cell_space_log10(7) - 353.0) < 1.0);
  PartSpec one;
  one.rows = 1;
  one.cells_per_row = 2;
  CHECK(estimate_space_size(one, 1, 1, 1) == 0.0);
  // Desk spec, hand-counted pathways per cell: (0,0):1 (0,1):2 (1,1):1
  // (0,2):3+1 (1,2):1+1 (0,3):4+1.
  PartSpec desk;
  const double per_op = 8 * std::log10(5.0);
  const double expected = 3 * per_op * (0 + 1 + 0 + 7 + 1 + 15);
  CHECK(estimate_space_size(desk) == doctest::Approx(expected).epsilon(1e-12));
}
