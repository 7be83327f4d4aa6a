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

#include "denas/decoder.hpp"

#include <algorithm>
#include <deque>
#include <numeric>
#include <set>

#include "denas/ops.hpp"

namespace denas {

namespace {

// Indices of `mass` sorted by descending value, stable on index order.
std::vector<int> by_mass(const std::vector<double>& mass) {
  std::vector<int> order(mass.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return mass[a] > mass[b]; });
  return order;
}

std::vector<int> cumulative_half(const std::vector<double>& mass, const std::vector<int>& candidates) {
  std::vector<double> m(mass.size(), -1.0);
  for (int i : candidates) m[i] = mass[i];
  std::vector<int> picked;
  double total = 0.0;
  for (int i : by_mass(m)) {
    if (m[i] < 0.0) break;
    picked.push_back(i);
    total += m[i];
    if (total > 0.5) break;
  }
  std::sort(picked.begin(), picked.end());
  return picked;
}

template <typename Vec>
int argmax_first(const Vec& v) {
  if (v.empty()) throw Error("argmax of an empty vector");
  int best = 0;
  for (int i = 1; i < static_cast<int>(v.size()); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

std::vector<double> numbers(const nlohmann::ordered_json& j) { return j.get<std::vector<double>>(); }

}  // namespace

std::vector<Path> decode_resolution(const std::vector<double>& beta_bar, const std::array<bool, kNumPaths>& has) {
  if (beta_bar.size() != kNumPaths) throw Error("beta must have three entries");
  std::vector<int> present;
  for (int k = 0; k < kNumPaths; ++k) {
    if (has[k]) present.push_back(k);
  }
  if (present.empty()) throw Error("cell has no resolution path");
  std::vector<Path> out;
  for (int k : cumulative_half(beta_bar, present)) out.push_back(static_cast<Path>(k));
  return out;
}

std::vector<int> decode_dense(const std::vector<double>& delta_bar) {
  if (delta_bar.empty()) return {};
  std::vector<int> all(delta_bar.size());
  std::iota(all.begin(), all.end(), 0);
  return cumulative_half(delta_bar, all);
}

OpChoice decode_cell_and_kernel(const std::vector<double>& alpha, const std::vector<double>& gamma) {
  if (alpha.size() != kNumOps) throw Error("alpha must have one entry per operator");
  if (gamma.size() != kNumWidths) throw Error("gamma must have one entry per width");
  for (double v : alpha) {
    if (!std::isfinite(v)) throw Error("alpha is not finite");
  }
  for (double v : gamma) {
    if (!std::isfinite(v)) throw Error("gamma is not finite");
  }
  return {kAllOps[argmax_first(alpha)], argmax_first(gamma)};
}

bool DecodedCell::has(Path p) const { return std::find(paths.begin(), paths.end(), p) != paths.end(); }

const DecodedCell* DecodedPart::find(int row, int layer) const {
  for (const auto& c : cells) {
    if (c.row == row && c.layer == layer) return &c;
  }
  return nullptr;
}

std::vector<DecodedCell> decode_cells(const nlohmann::ordered_json& aw, const PartSpec& spec) {
  spec.validate();
  const auto geo = part_geometry(spec);
  try {
    if (aw.at("rows").get<int>() != spec.rows || aw.at("cells_per_row").get<int>() != spec.cells_per_row) {
      throw Error("architecture weights were searched on a different grid");
    }
    const auto& cells = aw.at("cells");
    if (cells.size() != geo.size()) throw Error("architecture weights list the wrong number of cells");
    std::vector<DecodedCell> out;
    for (std::size_t i = 0; i < geo.size(); ++i) {
      const CellGeometry& g = geo[i];
      const auto& e = cells[i];
      if (e.at("row").get<int>() != g.row || e.at("layer").get<int>() != g.layer) {
        throw Error("architecture weights are out of evaluation order");
      }
      DecodedCell c;
      c.row = g.row;
      c.layer = g.layer;
      const OpChoice oc = decode_cell_and_kernel(numbers(e.at("alpha")), numbers(e.at("gamma")));
      c.op = oc.op;
      c.w_out = oc.width;
      c.w_in = g.prev_in_row < 0 ? 0 : out[g.prev_in_row].w_out;
      c.paths = decode_resolution(normalized_beta(numbers(e.at("beta")), g.has), g.has);
      if (c.has(Path::same)) {
        const auto delta = numbers(e.at("delta"));
        if (delta.size() != g.history.size()) throw Error("delta does not match the dense history");
        for (int k : decode_dense(softmax_of(delta))) c.dense.push_back(g.history[k]);
      }
      out.push_back(std::move(c));
    }
    return out;
  } catch (const nlohmann::json::exception& ex) {
    throw Error(std::string("malformed architecture weights: ") + ex.what());
  }
}

std::vector<DecodedCell> bfs_topology(const std::vector<DecodedCell>& cells, const PartSpec& spec) {
  auto index = [&](int r, int l) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (cells[i].row == r && cells[i].layer == l) return static_cast<int>(i);
    }
    throw Error("decoded cell (" + std::to_string(r) + ", " + std::to_string(l) + ") is missing");
  };
  const int out = index(0, spec.cells_per_row - 1);
  if (cells[out].paths.empty()) throw Error("output cell has no selected input path");
  std::vector<bool> seen(cells.size(), false);
  std::deque<int> queue{out};
  seen[out] = true;
  auto visit = [&](int r, int l) {
    const int i = index(r, l);
    if (!seen[i]) {
      seen[i] = true;
      queue.push_back(i);
    }
  };
  while (!queue.empty()) {
    const DecodedCell& c = cells[queue.front()];
    queue.pop_front();
    if (c.paths.empty()) {
      throw Error("cell (" + std::to_string(c.row) + ", " + std::to_string(c.layer) + ") has no selected path");
    }
    if (c.has(Path::up)) {
      visit(c.row + 1, c.layer - 1);
      visit(c.row, c.row);
    }
    if (c.has(Path::same)) {
      if (c.dense.empty()) throw Error("same path selected without dense sources");
      for (int l : c.dense) {
        if (l >= 0) visit(c.row, l);
      }
    }
    if (c.has(Path::down)) visit(c.row - 1, c.layer - 1);
  }
  std::vector<DecodedCell> kept;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (seen[i]) kept.push_back(cells[i]);
  }
  return kept;
}

DecodedPart decode_part(const nlohmann::ordered_json& archweights, const PartSpec& spec) {
  DecodedPart p;
  p.spec = spec;
  p.cells = bfs_topology(decode_cells(archweights, spec), spec);
  return p;
}

DecodedArchitecture assemble(std::vector<DecodedPart> parts, bool global_residual) {
  if (parts.empty()) throw Error("assemble: no parts");
  DecodedArchitecture a;
  a.global_residual = global_residual;
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    const int out = parts[i].spec.out_channels;
    const int in = parts[i + 1].spec.in_channels;
    if (out != in) a.adapters.push_back({static_cast<int>(i), out, in});
  }
  if (global_residual && parts.front().spec.in_channels != parts.back().spec.out_channels) {
    throw Error("global residual needs equal input and output channels");
  }
  a.parts = std::move(parts);
  return a;
}

double decoded_cost_ms(const DecodedArchitecture& arch, const LatencyTable& table) {
  double total = 0.0;
  for (const auto& p : arch.parts) {
    for (const auto& c : p.cells) total += 1e3 * table.at(c.op, c.row, c.w_in, c.w_out);
  }
  return total;
}

DecodedPart random_part(const PartSpec& spec, Rng& rng) {
  ArchWeights<double> w(spec, rng, 1.0);
  return decode_part(w.to_json(), spec);
}

nlohmann::ordered_json DecodedArchitecture::to_json() const {
  nlohmann::ordered_json j;
  j["stem_width"] = stem_width();
  j["global_residual"] = global_residual;
  auto& ps = j["parts"] = nlohmann::ordered_json::array();
  for (const auto& p : parts) {
    nlohmann::ordered_json pj;
    pj["rows"] = p.spec.rows;
    pj["cells_per_row"] = p.spec.cells_per_row;
    pj["base_width"] = p.spec.base_width;
    pj["in_channels"] = p.spec.in_channels;
    pj["out_channels"] = p.spec.out_channels;
    pj["window"] = p.spec.zoo.window;
    pj["mlp_ratio"] = p.spec.zoo.mlp_ratio;
    auto& cs = pj["cells"] = nlohmann::ordered_json::array();
    for (const auto& c : p.cells) {
      nlohmann::ordered_json cj;
      cj["row"] = c.row;
      cj["layer"] = c.layer;
      cj["op"] = op_name(c.op);
      auto& paths = cj["paths"] = nlohmann::ordered_json::array();
      for (Path q : c.paths) paths.push_back(path_name(q));
      cj["dense"] = c.dense;
      cj["w_in"] = c.w_in;
      cj["w_out"] = c.w_out;
      cj["c_in"] = p.in_width(c);
      cj["c_out"] = p.out_width(c);
      cs.push_back(std::move(cj));
    }
    ps.push_back(std::move(pj));
  }
  auto& ad = j["adapters"] = nlohmann::ordered_json::array();
  for (const auto& a : adapters) {
    ad.push_back({{"after_part", a.after_part}, {"in", a.in_channels}, {"out", a.out_channels}});
  }
  return j;
}

DecodedArchitecture DecodedArchitecture::from_json(const nlohmann::ordered_json& j) {
  try {
    std::vector<DecodedPart> parts;
    for (const auto& pj : j.at("parts")) {
      DecodedPart p;
      p.spec.rows = pj.at("rows").get<int>();
      p.spec.cells_per_row = pj.at("cells_per_row").get<int>();
      p.spec.base_width = pj.at("base_width").get<int>();
      p.spec.in_channels = pj.at("in_channels").get<int>();
      p.spec.out_channels = pj.at("out_channels").get<int>();
      p.spec.zoo.window = pj.value("window", p.spec.zoo.window);
      p.spec.zoo.mlp_ratio = pj.value("mlp_ratio", p.spec.zoo.mlp_ratio);
      p.spec.validate();
      for (const auto& cj : pj.at("cells")) {
        DecodedCell c;
        c.row = cj.at("row").get<int>();
        c.layer = cj.at("layer").get<int>();
        if (!p.spec.has_cell(c.row, c.layer)) throw Error("architecture names a cell outside the grid");
        c.op = parse_op(cj.at("op").get<std::string>());
        for (const auto& q : cj.at("paths")) c.paths.push_back(parse_path(q.get<std::string>()));
        c.dense = cj.at("dense").get<std::vector<int>>();
        c.w_in = cj.at("w_in").get<int>();
        c.w_out = cj.at("w_out").get<int>();
        if (c.w_in < 0 || c.w_in >= kNumWidths || c.w_out < 0 || c.w_out >= kNumWidths) {
          throw Error("architecture width index out of range");
        }
        p.cells.push_back(std::move(c));
      }
      // Re-running the walk rejects cells that are missing or unreachable.
      if (bfs_topology(p.cells, p.spec).size() != p.cells.size()) {
        throw Error("architecture lists cells that do not feed the output");
      }
      parts.push_back(std::move(p));
    }
    DecodedArchitecture a = assemble(std::move(parts), j.value("global_residual", true));
    if (j.contains("stem_width") && j.at("stem_width").get<int>() != a.stem_width()) {
      throw Error("stem_width disagrees with the first part");
    }
    return a;
  } catch (const nlohmann::json::exception& ex) {
    throw Error(std::string("malformed architecture: ") + ex.what());
  }
}

// ---------------------------------------------------------------------------

template <typename T>
DecodedModel<T>::DecodedModel(const DecodedArchitecture& arch, Rng& rng) : arch_(arch) {
  for (std::size_t pi = 0; pi < arch_.parts.size(); ++pi) {
    const DecodedPart& p = arch_.parts[pi];
    const std::string pre = "part" + std::to_string(pi) + "/";
    PartUnit u;
    const int c0 = p.spec.base_width;
    u.stem_w = &store_.add(pre + "stem/w", init_kernel<T>(c0, p.spec.in_channels, 3, rng));
    u.stem_b = &store_.add(pre + "stem/b", Tensor<T>(Shape{c0, 1, 1, 1}));
    for (const auto& c : p.cells) {
      const std::string name = pre + "cell_" + std::to_string(c.row) + "_" + std::to_string(c.layer);
      const int win = p.in_width(c);
      CellUnit cu;
      cu.cell = c;
      cu.op = std::make_unique<Operator<T>>(c.op, win, p.out_width(c), store_, name + "/" + std::string(op_name(c.op)),
                                            rng, p.spec.zoo, c.layer % 2);
      if (c.has(Path::up)) {
        const DecodedCell* low = p.find(c.row + 1, c.layer - 1);
        const DecodedCell* skip = p.find(c.row, c.row);
        if (!low || !skip) throw Error("up path source was pruned");
        cu.up = std::make_unique<Upsample<T>>(p.out_width(*low), p.out_width(*skip), win, store_, name + "/up", rng);
      }
      if (c.has(Path::down)) {
        const DecodedCell* high = p.find(c.row - 1, c.layer - 1);
        if (!high) throw Error("down path source was pruned");
        cu.down_w = &store_.add(name + "/down/w", init_kernel<T>(win, p.out_width(*high), 3, rng));
        cu.down_b = &store_.add(name + "/down/b", Tensor<T>(Shape{win, 1, 1, 1}));
      }
      u.cells.push_back(std::move(cu));
    }
    if (p.spec.out_channels != c0) {
      u.tail_w = &store_.add(pre + "tail/w", init_kernel<T>(p.spec.out_channels, c0, 3, rng));
      u.tail_b = &store_.add(pre + "tail/b", Tensor<T>(Shape{p.spec.out_channels, 1, 1, 1}));
      // The residual branch starts near zero so training begins from the
      // noisy input rather than from noise.
      if (arch_.global_residual && pi + 1 == arch_.parts.size()) {
        for (auto& v : u.tail_w->value().values()) v *= T(0.1);
      }
    }
    parts_.push_back(std::move(u));
  }
  for (const auto& a : arch_.adapters) {
    AdapterUnit au;
    au.spec = a;
    const std::string pre = "adapter" + std::to_string(a.after_part) + "/";
    au.w = &store_.add(pre + "w", init_kernel<T>(a.out_channels, a.in_channels, 1, rng));
    au.b = &store_.add(pre + "b", Tensor<T>(Shape{a.out_channels, 1, 1, 1}));
    adapters_.push_back(au);
  }
}

template <typename T>
Var<T> DecodedModel<T>::forward_part(Graph<T>& g, int part, Var<T> x, std::vector<Var<T>>* cells) const {
  if (part < 0 || part >= static_cast<int>(parts_.size())) throw Error("part index out of range");
  const DecodedPart& p = arch_.parts[part];
  const PartUnit& u = parts_[part];
  if (x.shape().c != p.spec.in_channels) {
    throw Error("part input has " + std::to_string(x.shape().c) + " channels, expected " +
                std::to_string(p.spec.in_channels));
  }
  const int L = p.spec.cells_per_row;
  if (cells) cells->clear();
  Var<T> stem = conv2d(x, g.param(*u.stem_w), std::optional<Var<T>>(g.param(*u.stem_b)), 1, 1, 1);
  std::vector<Var<T>> out(static_cast<std::size_t>(p.spec.rows) * L);
  auto at = [&](int r, int l) -> Var<T>& {
    Var<T>& v = out[static_cast<std::size_t>(r) * L + l];
    return v;
  };
  for (const CellUnit& cu : u.cells) {
    const DecodedCell& c = cu.cell;
    const int win = p.in_width(c);
    std::vector<Var<T>> cands;
    if (c.has(Path::up)) cands.push_back(cu.up->apply(g, at(c.row + 1, c.layer - 1), at(c.row, c.row), win));
    if (c.has(Path::same)) {
      std::vector<Var<T>> hist;
      for (int l : c.dense) hist.push_back(resize_channels(l < 0 ? stem : at(c.row, l), win));
      Var<T> s = hist[0];
      for (std::size_t k = 1; k < hist.size(); ++k) s = add(s, hist[k]);
      if (hist.size() > 1) s = scale(s, static_cast<T>(1.0 / hist.size()));
      cands.push_back(s);
    }
    if (c.has(Path::down)) {
      cands.push_back(conv2d(at(c.row - 1, c.layer - 1), g.param(*cu.down_w),
                             std::optional<Var<T>>(g.param(*cu.down_b)), 2, 1, 1));
    }
    Var<T> xin = cands[0];
    for (std::size_t k = 1; k < cands.size(); ++k) xin = add(xin, cands[k]);
    if (cands.size() > 1) xin = scale(xin, static_cast<T>(1.0 / cands.size()));
    at(c.row, c.layer) = cu.op->apply(g, xin);
    if (cells) cells->push_back(at(c.row, c.layer));
  }
  Var<T> y = resize_channels(at(0, L - 1), p.spec.base_width);
  if (u.tail_w) y = conv2d(y, g.param(*u.tail_w), std::optional<Var<T>>(g.param(*u.tail_b)), 1, 1, 1);
  return y;
}

template <typename T>
Var<T> DecodedModel<T>::forward(Graph<T>& g, Var<T> x, std::vector<Var<T>>* features) const {
  if (features) features->clear();
  Var<T> h = x;
  for (int i = 0; i < static_cast<int>(parts_.size()); ++i) {
    h = forward_part(g, i, h);
    for (const auto& a : adapters_) {
      if (a.spec.after_part == i) h = conv2d(h, g.param(*a.w), std::optional<Var<T>>(g.param(*a.b)), 1, 1, 0);
    }
    if (features) features->push_back(h);
  }
  return arch_.global_residual ? add(x, h) : h;
}

template <typename T>
nlohmann::ordered_json DecodedModel<T>::to_json() const {
  return {{"architecture", arch_.to_json()}, {"params", store_.to_json()}};
}

template <typename T>
std::unique_ptr<DecodedModel<T>> DecodedModel<T>::from_json(const nlohmann::ordered_json& j) {
  try {
    Rng rng(0);
    auto m = std::make_unique<DecodedModel<T>>(DecodedArchitecture::from_json(j.at("architecture")), rng);
    m->store_.load_json(j.at("params"));
    return m;
  } catch (const nlohmann::json::exception& ex) {
    throw Error(std::string("malformed model file: ") + ex.what());
  }
}

template class DecodedModel<float>;
template class DecodedModel<double>;

}  // namespace denas
