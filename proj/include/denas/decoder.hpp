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

// Discrete architectures derived from trained architecture weights, and the
// runnable models built from them.

#pragma once

#include <memory>
#include <vector>

#include "denas/latency.hpp"
#include "denas/supernet.hpp"

namespace denas {

/// Cumulative 0.5-mass rule over the present paths (absent entries of
/// beta_bar are ignored). Ties resolve in up, same, down order. Returned in
/// menu order.
std::vector<Path> decode_resolution(const std::vector<double>& beta_bar,
                                    const std::array<bool, kNumPaths>& has = {true, true, true});

/// Same rule over dense history entries; ties resolve to the lower index.
/// Returned ascending.
std::vector<int> decode_dense(const std::vector<double>& delta_bar);

struct OpChoice {
  OpKind op = OpKind::skip;
  int width = 0;  // width-menu index
};

/// argmax of alpha and gamma; ties resolve to the earlier menu entry.
OpChoice decode_cell_and_kernel(const std::vector<double>& alpha, const std::vector<double>& gamma);

struct DecodedCell {
  int row = 0;
  int layer = 0;
  OpKind op = OpKind::skip;
  std::vector<Path> paths;
  /// Selected same-row sources as layer numbers, -1 for the stem.
  std::vector<int> dense;
  int w_in = 0;   // menu index of the input width
  int w_out = 0;  // menu index of the output width
  bool has(Path p) const;
};

struct DecodedPart {
  PartSpec spec;
  /// Retained cells in evaluation order.
  std::vector<DecodedCell> cells;
  const DecodedCell* find(int row, int layer) const;
  int in_width(const DecodedCell& c) const { return menu_width(spec.row_width(c.row), c.w_in); }
  int out_width(const DecodedCell& c) const { return menu_width(spec.row_width(c.row), c.w_out); }
};

/// 1x1 convolution inserted between parts whose channel counts differ.
struct Adapter {
  int after_part = 0;
  int in_channels = 0;
  int out_channels = 0;
};

struct DecodedArchitecture {
  std::vector<DecodedPart> parts;
  std::vector<Adapter> adapters;
  bool global_residual = true;

  int stem_width() const { return parts.at(0).spec.base_width; }
  nlohmann::ordered_json to_json() const;
  static DecodedArchitecture from_json(const nlohmann::ordered_json& j);
};

/// Every cell of a part decoded independently, before pruning. Input widths
/// follow the decoded output width of the previous cell of the row.
std::vector<DecodedCell> decode_cells(const nlohmann::ordered_json& archweights, const PartSpec& spec);

/// Reverse breadth-first walk from the output cell over selected edges.
/// Unvisited cells are dropped. Throws when the output cell has no selected
/// input.
std::vector<DecodedCell> bfs_topology(const std::vector<DecodedCell>& cells, const PartSpec& spec);

DecodedPart decode_part(const nlohmann::ordered_json& archweights, const PartSpec& spec);

/// Chains the parts, inserting adapters where channel counts disagree.
DecodedArchitecture assemble(std::vector<DecodedPart> parts, bool global_residual = true);

/// Sum over retained cells of the table entry of (op, row, w_in, w_out), ms.
double decoded_cost_ms(const DecodedArchitecture& arch, const LatencyTable& table);

/// Decodes architecture weights drawn at random (unit-scale logits).
DecodedPart random_part(const PartSpec& spec, Rng& rng);

/// A freshly initialized network with the decoded structure.
template <typename T>
class DecodedModel {
 public:
  DecodedModel(const DecodedArchitecture& arch, Rng& rng);

  const DecodedArchitecture& architecture() const { return arch_; }
  ParamStore<T>& weights() { return store_; }
  const ParamStore<T>& weights() const { return store_; }

  /// `cells` (optional) receives each retained cell's output in order.
  Var<T> forward_part(Graph<T>& g, int part, Var<T> x, std::vector<Var<T>>* cells = nullptr) const;
  /// Outputs of every part (adapters applied), last entry before the global
  /// residual. `features` may be null.
  Var<T> forward(Graph<T>& g, Var<T> x, std::vector<Var<T>>* features = nullptr) const;

  nlohmann::ordered_json to_json() const;
  static std::unique_ptr<DecodedModel> from_json(const nlohmann::ordered_json& j);

 private:
  struct CellUnit {
    DecodedCell cell;
    std::unique_ptr<Operator<T>> op;
    std::unique_ptr<Upsample<T>> up;
    Parameter<T>* down_w = nullptr;
    Parameter<T>* down_b = nullptr;
  };
  struct PartUnit {
    Parameter<T>* stem_w = nullptr;
    Parameter<T>* stem_b = nullptr;
    Parameter<T>* tail_w = nullptr;
    Parameter<T>* tail_b = nullptr;
    std::vector<CellUnit> cells;
  };
  struct AdapterUnit {
    Adapter spec;
    Parameter<T>* w = nullptr;
    Parameter<T>* b = nullptr;
  };

  DecodedArchitecture arch_;
  ParamStore<T> store_;
  std::vector<PartUnit> parts_;
  std::vector<AdapterUnit> adapters_;
};

extern template class DecodedModel<float>;
extern template class DecodedModel<double>;

}  // namespace denas
