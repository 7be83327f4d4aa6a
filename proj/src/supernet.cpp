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

#include <algorithm>
#include <cmath>

namespace denas {

std::string_view path_name(Path p) {
  static constexpr std::array<std::string_view, kNumPaths> names = {"up", "same", "down"};
  return names.at(static_cast<std::size_t>(p));
}

Path parse_path(std::string_view name) {
  for (int i = 0; i < kNumPaths; ++i) {
    if (path_name(static_cast<Path>(i)) == name) return static_cast<Path>(i);
  }
  throw Error("unknown resolution path '" + std::string(name) + "'");
}

std::string_view strategy_name(CellStrategy s) {
  switch (s) {
    case CellStrategy::darts:
      return "darts";
    case CellStrategy::gdas:
      return "gdas";
    case CellStrategy::single_op:
      return "single_op";
  }
  return "";
}

CellStrategy parse_strategy(std::string_view name) {
  for (auto s : {CellStrategy::darts, CellStrategy::gdas, CellStrategy::single_op}) {
    if (strategy_name(s) == name) return s;
  }
  throw Error("unknown cell strategy '" + std::string(name) + "'");
}

void PartSpec::validate() const {
  if (rows < 1) throw Error("part: rows must be >= 1");
  if (cells_per_row < 2) throw Error("part: cells_per_row must be >= 2");
  if (cells_per_row < 2 * rows - 1) {
    throw Error("part: cells_per_row must be >= 2*rows-1 to reach the lowest row");
  }
  if (base_width < 16 || base_width % 16 != 0) {
    throw Error("part: base_width must be a positive multiple of 16");
  }
  if (in_channels < 1 || out_channels < 1) throw Error("part: channel counts must be positive");
  if (zoo.window < 1 || zoo.mlp_ratio < 1) throw Error("part: invalid SWIN options");
}

bool PartSpec::has_cell(int row, int layer) const {
  return row >= 0 && row < rows && layer >= row && layer <= cells_per_row - 1 - row;
}

std::vector<CellGeometry> part_geometry(const PartSpec& spec) {
  std::vector<CellGeometry> cells;
  for (int l = 0; l < spec.cells_per_row; ++l) {
    for (int r = 0; r < spec.rows; ++r) {
      if (!spec.has_cell(r, l)) continue;
      CellGeometry c;
      c.row = r;
      c.layer = l;
      c.has[static_cast<int>(Path::up)] = spec.has_cell(r + 1, l - 1);
      c.has[static_cast<int>(Path::down)] = spec.has_cell(r - 1, l - 1);
      if (r == 0) c.history.push_back(-1);
      for (int k = r; k < l; ++k) c.history.push_back(k);
      c.has[static_cast<int>(Path::same)] = !c.history.empty();
      c.prev_in_row = cell_index(cells, r, l - 1);
      cells.push_back(std::move(c));
    }
  }
  return cells;
}

int cell_index(const std::vector<CellGeometry>& cells, int row, int layer) {
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (cells[i].row == row && cells[i].layer == layer) return static_cast<int>(i);
  }
  return -1;
}

double cell_space_log10(int pathways, int ops, int widths) {
  if (pathways < 1 || ops < 1 || widths < 1) throw Error("space size: counts must be positive");
  const double patterns = std::floor((std::pow(2.0, pathways) - 1.0) / 2.0);
  return patterns * ops * std::log10(static_cast<double>(widths));
}

double estimate_space_size(const PartSpec& spec, int parts, int ops, int widths) {
  if (parts < 1) throw Error("space size: part count must be positive");
  double per_part = 0.0;
  for (const auto& c : part_geometry(spec)) {
    const int p = static_cast<int>(c.history.size()) + c.has[0] + c.has[2];
    per_part += cell_space_log10(p, ops, widths);
  }
  return parts * per_part;
}

// ---------------------------------------------------------------------------

template <typename T>
ArchWeights<T>::ArchWeights(const PartSpec& spec, Rng& rng, double init_scale)
    : spec_(spec), geometry_(part_geometry(spec)) {
  auto vec = [&](int k) {
    return Tensor<T>::randn(Shape{1, k, 1, 1}, rng, static_cast<T>(init_scale));
  };
  for (const auto& c : geometry_) {
    const std::string name = "cell_" + std::to_string(c.row) + "_" + std::to_string(c.layer);
    CellArch<T> a;
    a.alpha = &store_.add(name + "/alpha", vec(kNumOps));
    a.beta = &store_.add(name + "/beta", vec(kNumPaths));
    a.gamma = &store_.add(name + "/gamma", vec(kNumWidths));
    if (!c.history.empty()) {
      a.delta = &store_.add(name + "/delta", vec(static_cast<int>(c.history.size())));
    }
    for (int k = 0; k < kNumPaths; ++k) {
      if (!c.has[k]) a.beta->value()[k] = T(0);
    }
    cells_.push_back(a);
  }
}

template <typename T>
nlohmann::ordered_json ArchWeights<T>::to_json() const {
  nlohmann::ordered_json j;
  j["rows"] = spec_.rows;
  j["cells_per_row"] = spec_.cells_per_row;
  j["cells"] = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < cells_.size(); ++i) {
    const auto& c = cells_[i];
    nlohmann::ordered_json e;
    e["row"] = geometry_[i].row;
    e["layer"] = geometry_[i].layer;
    e["alpha"] = c.alpha->value().storage();
    e["beta"] = c.beta->value().storage();
    e["gamma"] = c.gamma->value().storage();
    e["delta"] = c.delta ? c.delta->value().storage() : Buffer<T>{};
    j["cells"].push_back(e);
  }
  return j;
}

template <typename T>
void ArchWeights<T>::load_json(const nlohmann::ordered_json& j) {
  if (j.at("rows").get<int>() != spec_.rows ||
      j.at("cells_per_row").get<int>() != spec_.cells_per_row ||
      j.at("cells").size() != cells_.size()) {
    throw Error("architecture weights do not match the part geometry");
  }
  for (std::size_t i = 0; i < cells_.size(); ++i) {
    const auto& e = j.at("cells").at(i);
    if (e.at("row").get<int>() != geometry_[i].row ||
        e.at("layer").get<int>() != geometry_[i].layer) {
      throw Error("architecture weights list cells in a different order");
    }
    auto set = [&](Parameter<T>* p, const char* key) {
      auto v = e.at(key).template get<std::vector<T>>();
      if (p == nullptr) {
        if (!v.empty()) throw Error(std::string("unexpected ") + key + " weights");
        return;
      }
      p->value() = Tensor<T>(p->value().shape(), std::move(v));
    };
    set(cells_[i].alpha, "alpha");
    set(cells_[i].beta, "beta");
    set(cells_[i].gamma, "gamma");
    set(cells_[i].delta, "delta");
  }
}

std::vector<double> softmax_of(const std::vector<double>& logits) {
  if (logits.empty()) return {};
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> out(logits.size());
  double s = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) s += (out[i] = std::exp(logits[i] - mx));
  for (double& v : out) v /= s;
  return out;
}

std::vector<double> normalized_beta(const std::vector<double>& beta,
                                    const std::array<bool, kNumPaths>& has) {
  std::vector<double> present;
  for (int k = 0; k < kNumPaths; ++k) {
    if (has[k]) present.push_back(beta.at(k));
  }
  const auto sm = softmax_of(present);
  std::vector<double> out(kNumPaths, 0.0);
  for (int k = 0, j = 0; k < kNumPaths; ++k) {
    if (has[k]) out[k] = sm[j++];
  }
  return out;
}

// ---------------------------------------------------------------------------

template <typename T>
Var<T> aggregate_resolution(const std::array<std::optional<Var<T>>, kNumPaths>& cands,
                            Var<T> beta) {
  std::vector<int> idx;
  for (int k = 0; k < kNumPaths; ++k) {
    if (cands[k]) idx.push_back(k);
  }
  if (idx.empty()) throw Error("aggregate_resolution: every candidate is absent");
  if (beta.value().size() != kNumPaths) throw Error("aggregate_resolution: beta must hold 3 logits");
  const Shape s = cands[idx[0]]->shape();
  for (int k : idx) {
    if (!(cands[k]->shape() == s)) {
      throw Error("aggregate_resolution: candidate shapes differ: " + s.str() +
                  " vs " + cands[k]->shape().str());
    }
  }
  Var<T> w = softmax(gather(beta, std::span<const int>(idx)));
  Var<T> out;
  for (std::size_t j = 0; j < idx.size(); ++j) {
    Var<T> term = scale_by(*cands[idx[j]], pick(w, static_cast<int>(j)));
    out = j == 0 ? term : add(out, term);
  }
  return out;
}

template <typename T>
Var<T> aggregate_dense(const std::vector<Var<T>>& history, Var<T> delta, int unified_width) {
  if (history.empty()) throw Error("aggregate_dense: empty history");
  if (delta.value().size() != history.size()) {
    throw Error("aggregate_dense: " + std::to_string(history.size()) + " maps but " +
                std::to_string(delta.value().size()) + " weights");
  }
  Var<T> w = softmax(delta);
  Var<T> out;
  for (std::size_t i = 0; i < history.size(); ++i) {
    Var<T> term = scale_by(resize_channels(history[i], unified_width), pick(w, static_cast<int>(i)));
    out = i == 0 ? term : add(out, term);
  }
  return out;
}

template <typename T>
Var<T> cell_forward_darts(Graph<T>& g, Var<T> x, const std::vector<const Operator<T>*>& ops,
                          Var<T> alpha, int out_width) {
  if (ops.empty() || ops.size() != alpha.value().size()) {
    throw Error("cell_forward_darts: " + std::to_string(ops.size()) + " operators for " +
                std::to_string(alpha.value().size()) + " weights");
  }
  Var<T> w = softmax(alpha);
  Var<T> out;
  for (std::size_t i = 0; i < ops.size(); ++i) {
    Var<T> term = scale_by(ops[i]->apply_slim(g, x, out_width), pick(w, static_cast<int>(i)));
    out = i == 0 ? term : add(out, term);
  }
  return out;
}

Draw gumbel_argmax(const std::vector<double>& logits, Rng& rng) {
  if (logits.empty()) throw Error("gumbel_argmax: empty logits");
  Draw d;
  d.gumbel.resize(logits.size());
  double best = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    d.gumbel[i] = rng.gumbel();
    const double v = logits[i] + d.gumbel[i];
    if (i == 0 || v > best) {
      best = v;
      d.index = static_cast<int>(i);
    }
  }
  return d;
}

namespace {

template <typename T>
std::vector<double> to_double(const Tensor<T>& t) {
  return std::vector<double>(t.storage().begin(), t.storage().end());
}

// softmax((logits + G) / tau) as a differentiable function of the logits.
template <typename T>
Var<T> relaxed_weights(Graph<T>& g, Var<T> logits, const std::vector<double>& gumbel, double tau) {
  std::vector<T> gv(gumbel.begin(), gumbel.end());
  Var<T> noise = g.input(Tensor<T>(logits.shape(), std::move(gv)));
  return softmax(scale(add(logits, noise), static_cast<T>(1.0 / tau)));
}

}  // namespace

template <typename T>
Var<T> cell_forward_sampled(Graph<T>& g, Var<T> x, const std::vector<const Operator<T>*>& ops,
                            Var<T> alpha, const Draw& draw, double tau, CellStrategy mode,
                            int out_width) {
  if (!(tau > 0.0)) throw Error("cell_forward_sampled: temperature must be positive");
  if (ops.empty() || ops.size() != alpha.value().size()) {
    throw Error("cell_forward_sampled: menu/weight length mismatch");
  }
  if (draw.index < 0 || draw.index >= static_cast<int>(ops.size())) {
    throw Error("cell_forward_sampled: sampled index out of range");
  }
  switch (mode) {
    case CellStrategy::single_op:
      return score_gate(ops[draw.index]->apply_slim(g, x, out_width), alpha, draw.index);
    case CellStrategy::gdas: {
      std::vector<Var<T>> outs;
      for (const auto* op : ops) outs.push_back(op->apply_slim(g, x, out_width));
      std::vector<double> gumbel = draw.gumbel;
      gumbel.resize(ops.size(), 0.0);
      return straight_through(outs, relaxed_weights(g, alpha, gumbel, tau), draw.index);
    }
    case CellStrategy::darts:
      break;
  }
  throw Error("cell_forward_sampled: darts is not a sampling strategy");
}

template <typename T>
Var<T> kernel_forward(Graph<T>& g, Var<T> x, Parameter<T>& kernel, std::optional<Var<T>> gamma_prev,
                      Var<T> gamma_cur, Rng& rng, double tau, int* i_prev, int* i_cur) {
  if (!(tau > 0.0)) throw Error("kernel_forward: temperature must be positive");
  if (gamma_cur.value().size() != kNumWidths ||
      (gamma_prev && gamma_prev->value().size() != kNumWidths)) {
    throw Error("kernel_forward: gamma vectors must hold 5 logits");
  }
  const int ip = gamma_prev ? gumbel_argmax(to_double(gamma_prev->value()), rng).index : 0;
  const Draw cur = gumbel_argmax(to_double(gamma_cur.value()), rng);
  const Shape ks = kernel.value().shape();
  const int w_in = menu_width(ks.c, ip);
  if (x.shape().c < w_in) {
    throw Error("kernel_forward: input has " + std::to_string(x.shape().c) +
                " channels, selected slice needs " + std::to_string(w_in));
  }
  Var<T> y = conv2d(narrow_channels(x, 0, w_in), slice_kernel(g, kernel, ip, cur.index),
                    std::optional<Var<T>>(), 1, 1, ks.h / 2);
  std::array<int, kNumWidths> widths{};
  for (int j = 0; j < kNumWidths; ++j) widths[j] = menu_width(ks.n, j);
  if (i_prev) *i_prev = ip;
  if (i_cur) *i_cur = cur.index;
  return width_gate(y, relaxed_weights(g, gamma_cur, cur.gumbel, tau), std::span<const int>(widths),
                    cur.index);
}

// ---------------------------------------------------------------------------

template <typename T>
Supernet<T>::Supernet(const PartSpec& spec, Rng& rng) : spec_(spec) {
  spec.validate();
  geometry_ = part_geometry(spec);
  const int c0 = spec.base_width;
  stem_w_ = &store_.add("stem/w", init_kernel<T>(c0, spec.in_channels, 3, rng));
  stem_b_ = &store_.add("stem/b", Tensor<T>(Shape{c0, 1, 1, 1}));
  for (const auto& c : geometry_) {
    const std::string name = "cell_" + std::to_string(c.row) + "_" + std::to_string(c.layer);
    const int cr = spec.row_width(c.row);
    std::vector<std::unique_ptr<Operator<T>>> ops;
    for (auto kind : kAllOps) {
      ops.push_back(std::make_unique<Operator<T>>(kind, cr, cr, store_,
                                                  name + "/" + std::string(op_name(kind)), rng,
                                                  spec.zoo, c.layer % 2));
    }
    ops_.push_back(std::move(ops));
    ups_.push_back(c.has[0] ? std::make_unique<Upsample<T>>(spec.row_width(c.row + 1), cr, cr,
                                                            store_, name + "/up", rng)
                            : nullptr);
    downs_.push_back(c.has[2] ? std::make_unique<Downsample<T>>(spec.row_width(c.row - 1),
                                                                store_, name + "/down", rng)
                              : nullptr);
  }
  if (spec.out_channels != c0) {
    tail_w_ = &store_.add("tail/w", init_kernel<T>(spec.out_channels, c0, 3, rng));
    tail_b_ = &store_.add("tail/b", Tensor<T>(Shape{spec.out_channels, 1, 1, 1}));
  }
}

template <typename T>
Var<T> Supernet<T>::forward(Graph<T>& g, Var<T> x, ArchWeights<T>& arch, Rng& rng,
                            const ForwardOptions& options,
                            std::vector<CellSample>* samples) const {
  if (x.shape().c != spec_.in_channels) {
    throw Error("part input has " + std::to_string(x.shape().c) + " channels, expected " +
                std::to_string(spec_.in_channels));
  }
  if (arch.size() != geometry_.size()) throw Error("architecture weights do not match the part");
  if (options.forced && options.forced->size() != geometry_.size()) {
    throw Error("forced sampling lists " + std::to_string(options.forced->size()) +
                " cells, part has " + std::to_string(geometry_.size()));
  }
  if (!(options.tau > 0.0)) throw Error("temperature must be positive");
  const int rows = spec_.rows;
  const int L = spec_.cells_per_row;
  Var<T> stem = conv2d(x, g.param(*stem_w_), std::optional<Var<T>>(g.param(*stem_b_)), 1, 1, 1);

  std::vector<Var<T>> out(static_cast<std::size_t>(rows) * L);
  auto at = [&](int r, int l) -> Var<T>& { return out[static_cast<std::size_t>(r) * L + l]; };
  std::vector<int> width_idx(geometry_.size(), 0);
  if (samples) samples->assign(geometry_.size(), CellSample{});
  if (options.cell_inputs) options.cell_inputs->clear();

  for (std::size_t ci = 0; ci < geometry_.size(); ++ci) {
    const CellGeometry& c = geometry_[ci];
    const CellArch<T>& a = arch.cell(static_cast<int>(ci));
    const int cr = spec_.row_width(c.row);
    const int u = c.prev_in_row < 0 ? cr : menu_width(cr, width_idx[c.prev_in_row]);

    std::array<std::optional<Var<T>>, kNumPaths> cands;
    if (c.has[0]) {
      cands[0] = ups_[ci]->apply(g, at(c.row + 1, c.layer - 1), at(c.row, c.row), u);
    }
    if (c.has[1]) {
      std::vector<Var<T>> hist;
      for (int l : c.history) hist.push_back(l < 0 ? stem : at(c.row, l));
      cands[1] = aggregate_dense(hist, g.param(*a.delta), u);
    }
    if (c.has[2]) cands[2] = downs_[ci]->apply(g, at(c.row - 1, c.layer - 1), u);
    Var<T> xin = aggregate_resolution(cands, g.param(*a.beta));
    if (options.cell_inputs) options.cell_inputs->push_back(xin.value().template cast<double>());

    Draw op_draw, width_draw;
    if (options.forced) {
      op_draw.index = (*options.forced)[ci].op;
      op_draw.gumbel.assign(kNumOps, 0.0);
      width_draw.index = (*options.forced)[ci].width;
      width_draw.gumbel.assign(kNumWidths, 0.0);
      if (width_draw.index < 0 || width_draw.index >= kNumWidths) {
        throw Error("forced width index out of range");
      }
    } else {
      if (options.strategy != CellStrategy::darts) {
        op_draw = gumbel_argmax(to_double(a.alpha->value()), rng);
      }
      width_draw = gumbel_argmax(to_double(a.gamma->value()), rng);
    }
    const int w_out = menu_width(cr, width_draw.index);
    std::vector<const Operator<T>*> ops;
    for (const auto& o : ops_[ci]) ops.push_back(o.get());
    Var<T> alpha = g.param(*a.alpha);
    Var<T> y = options.strategy == CellStrategy::darts
                   ? cell_forward_darts(g, xin, ops, alpha, w_out)
                   : cell_forward_sampled(g, xin, ops, alpha, op_draw, options.tau,
                                          options.strategy, w_out);
    std::array<int, kNumWidths> widths{};
    for (int j = 0; j < kNumWidths; ++j) widths[j] = menu_width(cr, j);
    Var<T> relaxed = relaxed_weights(g, g.param(*a.gamma), width_draw.gumbel, options.tau);
    at(c.row, c.layer) = width_gate(y, relaxed, std::span<const int>(widths), width_draw.index);
    width_idx[ci] = width_draw.index;
    if (samples) (*samples)[ci] = CellSample{op_draw.index, width_draw.index};
  }

  Var<T> y = resize_channels(at(0, L - 1), spec_.base_width);
  if (tail_w_) y = conv2d(y, g.param(*tail_w_), std::optional<Var<T>>(g.param(*tail_b_)), 1, 1, 1);
  return y;
}

#define DENAS_INSTANTIATE_SUPERNET(T)                                                       \
  template class ArchWeights<T>;                                                            \
  template class Supernet<T>;                                                               \
  template Var<T> aggregate_resolution(const std::array<std::optional<Var<T>>, kNumPaths>&, \
                                       Var<T>);                                             \
  template Var<T> aggregate_dense(const std::vector<Var<T>>&, Var<T>, int);                \
  template Var<T> cell_forward_darts(Graph<T>&, Var<T>, const std::vector<const Operator<T>*>&, \
                                     Var<T>, int);                                          \
  template Var<T> cell_forward_sampled(Graph<T>&, Var<T>,                                   \
                                       const std::vector<const Operator<T>*>&, Var<T>,      \
                                       const Draw&, double, CellStrategy, int);             \
  template Var<T> kernel_forward(Graph<T>&, Var<T>, Parameter<T>&, std::optional<Var<T>>,   \
                                 Var<T>, Rng&, double, int*, int*);

DENAS_INSTANTIATE_SUPERNET(float)
DENAS_INSTANTIATE_SUPERNET(double)

}  // namespace denas
