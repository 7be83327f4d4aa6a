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

#include "denas/zoo.hpp"

#include "doctest.h"
#include "helpers.hpp"
#include "oracles.hpp"

using namespace denas;
using testing::Bag;
using testing::D;
using testing::fd_error;
using testing::probe;

namespace {

Var<D> in(Graph<D>& g, Shape s, Rng& rng) { return g.input(Tensor<D>::randn(s, rng)); }

void zero(Parameter<D>& p) { p.value().fill(0.0); }

}  // namespace

TEST_CASE("menu widths") {
  CHECK(menu_width(64, 0) == 64);
  CHECK(menu_width(64, 4) == 32);
  CHECK(menu_width(16, 1) == 14);
  CHECK(menu_width(3, 4) == 2);
  CHECK(menu_width(1, 4) == 1);
  for (int i = 1; i < kNumWidths; ++i) CHECK(menu_fraction(i) < menu_fraction(i - 1));
  CHECK(menu_fraction(0) == 1.0);
  CHECK_THROWS_AS(menu_width(16, 5), Error);
  for (auto k : kAllOps) CHECK(parse_op(op_name(k)) == k);
  CHECK_THROWS_AS(parse_op("sep_conv"), Error);
}

TEST_CASE("every operator obeys the shape law at every width pair") {
  Rng rng(1);
  for (auto kind : kAllOps) {
    ParamStore<D> store;
    Operator<D> op(kind, 16, 16, store, "op", rng);
    for (int i = 0; i < kNumWidths; ++i) {
      for (int j = 0; j < kNumWidths; ++j) {
        Graph<D> g;
        const int win = menu_width(16, i), wout = menu_width(16, j);
        Var<D> y = op.apply_slim(g, in(g, Shape{2, win, 8, 8}, rng), wout);
        INFO(op_name(kind) << " " << win << "->" << wout);
        CHECK(y.shape() == (Shape{2, wout, 8, 8}));
      }
    }
    Graph<D> g;
    CHECK_THROWS_AS(op.apply(g, in(g, Shape{1, 12, 8, 8}, rng)), Error);
  }
}

TEST_CASE("skip is a parameter-free identity") {
  Rng rng(2);
  ParamStore<D> store;
  Operator<D> op(OpKind::skip, 8, 8, store, "skip", rng);
  CHECK(op.param_count() == 0);
  CHECK(store.size() == 0);
  Graph<D> g;
  Var<D> x = in(g, Shape{1, 8, 4, 4}, rng);
  CHECK(op.apply(g, x).value().storage() == x.value().storage());
}

TEST_CASE("conv_r with a zero kernel is the identity") {
  Rng rng(3);
  ParamStore<D> store;
  Operator<D> op(OpKind::conv_r, 8, 8, store, "r", rng);
  zero(store.at("r/w"));
  Graph<D> g;
  Var<D> x = in(g, Shape{2, 8, 5, 5}, rng);
  CHECK(op.apply(g, x).value().storage() == x.value().storage());
}

TEST_CASE("HIN normalizes its first half to zeros on constant input") {
  Rng rng(4);
  ParamStore<D> store;
  Operator<D> op(OpKind::HIN, 8, 8, store, "hin", rng);
  // A centre-only kernel keeps constant planes constant despite padding.
  auto& w = store.at("hin/c1_w").value();
  for (int o = 0; o < 8; ++o)
    for (int i = 0; i < 8; ++i)
      for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b)
          if (a != 1 || b != 1) w.at(o, i, a, b) = 0.0;
  Graph<D> g;
  Var<D> x = g.input(Tensor<D>(Shape{1, 8, 6, 6}, 0.3));
  auto t = op.hin_pre_activation(g, x, 8).value();
  // The blocked GEMM may mix fused and unfused multiply-adds across
  // positions, so the conv output is constant only up to rounding.
  for (int c = 0; c < 4; ++c)
    for (int y = 0; y < 6; ++y)
      for (int xx = 0; xx < 6; ++xx) CHECK(std::abs(t.at(0, c, y, xx)) <= 1e-12);
}

TEST_CASE("IB roundtrip, zero coupling and composition") {
  for (int seed = 0; seed < 20; ++seed) {
    Rng rng(100 + seed);
    ParamStore<D> store;
    Operator<D> a(OpKind::IB, 8, 8, store, "a", rng);
    Operator<D> b(OpKind::IB, 8, 8, store, "b", rng);
    Graph<D> g;
    Var<D> x = in(g, Shape{2, 8, 6, 6}, rng);
    CHECK(max_abs_diff(a.invert_ib(g, a.apply(g, x)).value(), x.value()) <= 1e-10);
    Var<D> y = b.apply(g, a.apply(g, x));
    CHECK(max_abs_diff(a.invert_ib(g, b.invert_ib(g, y)).value(), x.value()) <= 1e-10);
  }
  Rng rng(5);
  ParamStore<D> store;
  Operator<D> op(OpKind::IB, 8, 8, store, "ib", rng);
  zero(store.at("ib/f2_w"));
  Graph<D> g;
  Var<D> x = in(g, Shape{1, 8, 4, 4}, rng);
  CHECK(op.apply(g, x).value().storage() == x.value().storage());
  CHECK(op.invert_ib(g, x).value().storage() == x.value().storage());
  CHECK_THROWS_AS(op.apply_slim(g, in(g, Shape{1, 7, 4, 4}, rng), 8), Error);
  CHECK_THROWS_AS(Operator<D>(OpKind::IB, 7, 7, store, "odd", rng), Error);
  ParamStore<D> s2;
  Operator<D> conv(OpKind::conv_d1, 8, 8, s2, "c", rng);
  CHECK_THROWS_AS(conv.invert_ib(g, x), Error);
}

TEST_CASE("SWIN attention with zero query/key projections averages values") {
  Rng rng(6);
  ParamStore<D> store;
  ZooOptions opt;
  opt.window = 4;
  Operator<D> op(OpKind::SWIN, 4, 4, store, "s", rng, opt);
  zero(store.at("s/q_w"));
  zero(store.at("s/k_w"));
  auto& o = store.at("s/o_w").value();
  o.fill(0.0);
  for (int c = 0; c < 4; ++c) o.at(c, c, 0, 0) = 1.0;
  Graph<D> g;
  Var<D> x = in(g, Shape{1, 4, 4, 4}, rng);
  auto y = op.swin_attention(g, x).value();
  const auto& v = store.at("s/v_w").value();
  for (int c = 0; c < 4; ++c) {
    double mean = 0;
    for (int ci = 0; ci < 4; ++ci)
      for (int p = 0; p < 16; ++p) mean += v.at(c, ci, 0, 0) * x.value()[ci * 16 + p] / 16.0;
    for (int p = 0; p < 16; ++p) CHECK(y[c * 16 + p] == doctest::Approx(x.value()[c * 16 + p] + mean).epsilon(1e-12));
  }
  Operator<D> bad(OpKind::SWIN, 4, 4, store, "t", rng, opt);
  CHECK_THROWS_AS(bad.apply(g, in(g, Shape{1, 4, 6, 4}, rng)), Error);
}

TEST_CASE("downsample examples") {
  Rng rng(7);
  ParamStore<D> store;
  Downsample<D> down(1, store, "d", rng);
  store.at("d/w").value().fill(1.0);
  Graph<D> g;
  Var<D> x = g.input(Tensor<D>(Shape{1, 1, 4, 4}, 1.0));
  auto y = down.apply(g, x).value();
  auto ref = oracle::conv2d(x.value(), store.at("d/w").value(), {}, 2, 1, 1);
  CHECK(y.at(0, 0, 0, 0) == 4.0);
  CHECK(max_abs_diff(y, ref) == 0.0);

  ParamStore<D> s2;
  Downsample<D> sub(3, s2, "d", rng);
  auto& w = s2.at("d/w").value();
  w.fill(0.0);
  for (int c = 0; c < 3; ++c) w.at(c, c, 1, 1) = 1.0;
  Var<D> r = in(g, Shape{2, 3, 6, 8}, rng);
  auto ys = sub.apply(g, r, 3).value();
  for (int n = 0; n < 2; ++n)
    for (int c = 0; c < 3; ++c)
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 4; ++j) CHECK(ys.at(n, c, i, j) == r.value().at(n, c, 2 * i, 2 * j));
  CHECK(sub.apply(g, r).shape() == (Shape{2, 6, 3, 4}));
  CHECK_THROWS_AS(sub.apply(g, in(g, Shape{1, 3, 5, 4}, rng)), Error);
}

TEST_CASE("upsample examples") {
  Rng rng(8);
  ParamStore<D> store;
  Upsample<D> up(8, 6, 2, store, "u", rng);
  auto& lw = up.low_kernel().value();
  lw.fill(0.0);
  lw.at(0, 0, 0, 0) = 1.0;
  lw.at(1, 1, 0, 0) = 1.0;
  Graph<D> g;
  Var<D> low = in(g, Shape{1, 8, 4, 4}, rng);
  Var<D> skip = g.input(Tensor<D>(Shape{1, 6, 8, 8}));
  auto y = up.apply(g, low, skip, 2);
  CHECK(y.shape() == (Shape{1, 2, 8, 8}));
  CHECK(max_abs_diff(y.value(), pixel_shuffle(low, 2).value()) == 0.0);
  CHECK_THROWS_AS(up.apply(g, low, in(g, Shape{1, 6, 6, 6}, rng), 2), Error);

  // Gradient reaches both inputs.
  Bag bag;
  auto& xl = bag.randn("low", Shape{1, 8, 4, 4}, rng);
  auto& xs = bag.randn("skip", Shape{1, 6, 8, 8}, rng);
  ParamStore<D> s2;
  Upsample<D> up2(8, 6, 5, s2, "u", rng);
  auto f = [&](Graph<D>& gg) { return probe(gg, up2.apply(gg, gg.param(xl), gg.param(xs), 5), 1); };
  CHECK(fd_error(f, bag.all()) <= 1e-4);
  double nl = 0, ns = 0;
  for (D v : xl.grad().values()) nl += std::abs(v);
  for (D v : xs.grad().values()) ns += std::abs(v);
  CHECK(nl > 0.0);
  CHECK(ns > 0.0);
}

TEST_CASE("slice_kernel aliases the full kernel") {
  Rng rng(9);
  ParamStore<D> store;
  auto& k = store.add("k", init_kernel<D>(64, 48, 3, rng));
  {
    Graph<D> g;
    CHECK(slice_kernel(g, k, 0, 0).shape() == k.value().shape());
    CHECK(slice_kernel(g, k, 0, 4).shape().n == 32);
    CHECK(slice_kernel(g, k, 4, 0).shape().c == 24);
    CHECK_THROWS_AS(slice_kernel(g, k, 0, 5), Error);
  }
  const Tensor<D> before = k.value();
  for (int step = 0; step < 3; ++step) {
    k.zero_grad();
    Graph<D> g;
    Var<D> x = g.input(Tensor<D>::randn(Shape{1, 24, 5, 5}, rng));
    Var<D> y = conv2d(x, slice_kernel(g, k, 4, 4), std::optional<Var<D>>(), 1, 1, 1);
    g.backward(mean(mul(y, y)));
    for (std::size_t i = 0; i < k.value().size(); ++i) k.value()[i] -= 0.1 * k.grad()[i];
  }
  const Shape s = k.value().shape();
  bool lead_changed = false;
  for (int o = 0; o < s.n; ++o)
    for (int i = 0; i < s.c; ++i)
      for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b) {
          const bool lead = o < 32 && i < 24;
          if (lead) {
            lead_changed = lead_changed || k.value().at(o, i, a, b) != before.at(o, i, a, b);
          } else {
            CHECK(k.value().at(o, i, a, b) == before.at(o, i, a, b));
          }
        }
  CHECK(lead_changed);
}

TEST_CASE("toy models") {
  Rng rng(10);
  for (int v = 1; v <= 5; ++v) {
    ParamStore<D> store;
    ToyModel<D> m(v, 8, store, rng, 3);
    Graph<D> g;
    Var<D> x = in(g, Shape{2, 3, 8, 8}, rng);
    CHECK(m.forward(g, x).shape() == x.shape());
    CHECK(m.has_concat() == (v != 1));
  }
  ParamStore<D> store;
  CHECK(ToyModel<D>(5, 8, store, rng).modules() ==
        std::vector<std::string>{"conv-stride2", "pixelshuffle", "concatenation"});
  ParamStore<D> s1;
  auto mods = ToyModel<D>(1, 8, s1, rng).modules();
  CHECK(std::find(mods.begin(), mods.end(), "concatenation") == mods.end());
  ParamStore<D> s0;
  CHECK_THROWS_AS(ToyModel<D>(6, 8, s0, rng), Error);
}

TEST_CASE("fd: every operator, 20 seeds") {
  ZooOptions opt;
  opt.window = 4;
  for (auto kind : kAllOps) {
    for (int seed = 0; seed < 20; ++seed) {
      Rng rng(200 + seed);
      ParamStore<D> store;
      const int wout = menu_width(8, seed % kNumWidths);
      Operator<D> op(kind, 8, 8, store, "op", rng, opt, seed % 2);
      Bag bag;
      auto& x = bag.randn("x", Shape{1, 6, 8, 8}, rng);
      auto params = store.all();
      params.push_back(&x);
      auto f = [&](Graph<D>& g) { return probe(g, op.apply_slim(g, g.param(x), wout), 3); };
      INFO(op_name(kind) << " seed " << seed);
      CHECK(fd_error(f, params, 12) <= 1e-4);
    }
  }
}

TEST_CASE("fd: resampling modules and toy models") {
  for (int seed = 0; seed < 20; ++seed) {
    Rng rng(300 + seed);
    ParamStore<D> store;
    Downsample<D> down(4, store, "d", rng);
    Upsample<D> up(8, 4, 4, store, "u", rng);
    Bag bag;
    auto& x = bag.randn("x", Shape{1, 4, 8, 8}, rng);
    auto params = store.all();
    params.push_back(&x);
    auto f = [&](Graph<D>& g) {
      Var<D> v = g.param(x);
      return probe(g, up.apply(g, down.apply(g, v), v, 4), 4);
    };
    CHECK(fd_error(f, params, 12) <= 1e-4);
  }
  for (int v = 1; v <= 5; ++v) {
    Rng rng(400 + v);
    ParamStore<D> store;
    ToyModel<D> m(v, 4, store, rng, 2);
    Bag bag;
    auto& x = bag.randn("x", Shape{1, 3, 4, 4}, rng);
    auto params = store.all();
    params.push_back(&x);
    auto f = [&](Graph<D>& g) { return probe(g, m.forward(g, g.param(x)), 5); };
    INFO("variant " << v);
    CHECK(fd_error(f, params, 8) <= 1e-4);
  }
}
