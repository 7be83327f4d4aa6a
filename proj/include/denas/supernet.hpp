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

// One searchable part: a diamond-shaped grid of cells over resolution rows.
// Cell (r, l) exists iff r <= l <= L-1-r, so every row is entered by a
// downsample and left by an upsample, and the output cell (0, L-1) sees
// every row.

#pragma once

#include <array>
#include <memory>
#include <optional>
#include <vector>

#include "denas/zoo.hpp"

namespace denas {

enum class Path { up = 0, same = 1, down = 2 };
inline constexpr int kNumPaths = 3;
std::string_view path_name(Path p);
Path parse_path(std::string_view name);

enum class CellStrategy { darts, gdas, single_op };
std::string_view strategy_name(CellStrategy s);
CellStrategy parse_strategy(std::string_view name);

struct PartSpec {
  int rows = 2;
  int cells_per_row = 4;
  int base_width = 16;
  int in_channels = 3;
  int out_channels = 16;
  ZooOptions zoo;

  /// Throws Error describing the first violated constraint.
  void validate() const;
  int row_width(int row) const { return base_width << row; }
  bool has_cell(int row, int layer) const;
};

/// Static wiring of one cell. Dense history entries are layer numbers of
/// the same row; -1 denotes the stem (row 0 only).
struct CellGeometry {
  int row = 0;
  int layer = 0;
  std::array<bool, kNumPaths> has{};
  std::vector<int> history;
  /// Index of the previous cell of the row in evaluation order, or -1.
  int prev_in_row = -1;
  int num_present() const { return has[0] + has[1] + has[2]; }
};

/// Cells in evaluation order: by layer, then by row.
std::vector<CellGeometry> part_geometry(const PartSpec& spec);
/// Index of cell (row, layer) in part_geometry order, or -1.
int cell_index(const std::vector<CellGeometry>& cells, int row, int layer);

/// log10 of the number of candidate architectures of `parts` parts: every
/// cell contributes floor((2^p - 1) / 2) connection patterns, p being its
/// incoming pathways (dense history plus cross-resolution sources), each
/// with (widths^ops) operator/width choices.
double estimate_space_size(const PartSpec& spec, int parts = 3,
                           int ops = kNumOps, int widths = kNumWidths);
/// log10 of one cell's share: floor((2^p - 1) / 2) * ops * log10(widths).
double cell_space_log10(int pathways, int ops = kNumOps, int widths = kNumWidths);

template <typename T>
struct CellArch {
  Parameter<T>* alpha = nullptr;
  Parameter<T>* beta = nullptr;
  Parameter<T>* gamma = nullptr;
  Parameter<T>* delta = nullptr;  // null when the cell has no same-row input
};

/// The four architecture-weight families of one part, stored as (1,K,1,1)
/// logits. beta always has three slots (up, same, down); absent paths are
/// ignored by every consumer.
template <typename T>
class ArchWeights {
 public:
  ArchWeights(const PartSpec& spec, Rng& rng, double init_scale = 1e-3);

  const std::vector<CellGeometry>& geometry() const { return geometry_; }
  CellArch<T>& cell(int i) { return cells_.at(i); }
  const CellArch<T>& cell(int i) const { return cells_.at(i); }
  std::size_t size() const { return cells_.size(); }
  ParamStore<T>& store() { return store_; }
  const ParamStore<T>& store() const { return store_; }

  nlohmann::ordered_json to_json() const;
  void load_json(const nlohmann::ordered_json& j);

 private:
  PartSpec spec_;
  std::vector<CellGeometry> geometry_;
  ParamStore<T> store_;
  std::vector<CellArch<T>> cells_;
};

/// Softmax over present entries of a beta vector; absent entries read 0.
std::vector<double> normalized_beta(const std::vector<double>& beta,
                                    const std::array<bool, kNumPaths>& has);
std::vector<double> softmax_of(const std::vector<double>& logits);

/// Cross-resolution aggregation: beta-softmax over the present candidates.
template <typename T>
Var<T> aggregate_resolution(const std::array<std::optional<Var<T>>, kNumPaths>& cands,
                            Var<T> beta);

/// Dense same-row aggregation; each entry is resized to `unified_width` by the
/// leading-channel rule before the delta-weighted sum.
template <typename T>
Var<T> aggregate_dense(const std::vector<Var<T>>& history, Var<T> delta,
                       int unified_width);

/// Sum_i softmax(alpha)_i * O_i(x) at widths x.c -> out_width.
template <typename T>
Var<T> cell_forward_darts(Graph<T>& g, Var<T> x,
                          const std::vector<const Operator<T>*>& ops,
                          Var<T> alpha, int out_width);

struct Draw {
  int index = 0;
  std::vector<double> gumbel;
};

/// argmax(logits + G), G i.i.d. Gumbel(0, 1).
Draw gumbel_argmax(const std::vector<double>& logits, Rng& rng);

/// Runs only the sampled operator in single-op mode; GDAS runs every
/// operator and attaches the straight-through relaxation.
template <typename T>
Var<T> cell_forward_sampled(Graph<T>& g, Var<T> x,
                            const std::vector<const Operator<T>*>& ops,
                            Var<T> alpha, const Draw& draw, double tau,
                            CellStrategy mode, int out_width);

/// Slimmable kernel application with width indices drawn from gamma_prev
/// (pinned to full width when null) and gamma_cur; gamma_cur receives the
/// straight-through relaxation gradient.
template <typename T>
Var<T> kernel_forward(Graph<T>& g, Var<T> x, Parameter<T>& kernel,
                      std::optional<Var<T>> gamma_prev, Var<T> gamma_cur,
                      Rng& rng, double tau, int* i_prev = nullptr,
                      int* i_cur = nullptr);

struct CellSample {
  int op = 0;
  int width = 0;
  bool operator==(const CellSample&) const = default;
};

struct ForwardOptions {
  CellStrategy strategy = CellStrategy::single_op;
  double tau = 1.0;
  /// When set, these indices replace the Gumbel draws (gradients still use
  /// the configured estimator).
  const std::vector<CellSample>* forced = nullptr;
  /// When set, receives every cell's aggregated input in evaluation order.
  std::vector<Tensor<double>>* cell_inputs = nullptr;
};

template <typename T>
class Supernet {
 public:
  Supernet(const PartSpec& spec, Rng& rng);

  const PartSpec& spec() const { return spec_; }
  const std::vector<CellGeometry>& cells() const { return geometry_; }
  ParamStore<T>& weights() { return store_; }
  const Operator<T>& op(int cell, int kind) const { return *ops_.at(cell).at(kind); }

  /// Evaluates the part. `samples` (optional) receives the drawn indices.
  Var<T> forward(Graph<T>& g, Var<T> x, ArchWeights<T>& arch, Rng& rng,
                 const ForwardOptions& options = {},
                 std::vector<CellSample>* samples = nullptr) const;

 private:
  PartSpec spec_;
  std::vector<CellGeometry> geometry_;
  ParamStore<T> store_;
  Parameter<T>* stem_w_ = nullptr;
  Parameter<T>* stem_b_ = nullptr;
  Parameter<T>* tail_w_ = nullptr;
  Parameter<T>* tail_b_ = nullptr;
  std::vector<std::vector<std::unique_ptr<Operator<T>>>> ops_;
  std::vector<std::unique_ptr<Upsample<T>>> ups_;
  std::vector<std::unique_ptr<Downsample<T>>> downs_;
};

extern template class ArchWeights<float>;
extern template class ArchWeights<double>;
extern template class Supernet<float>;
extern template class Supernet<double>;

}  // namespace denas
