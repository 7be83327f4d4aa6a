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

// Architecture statistics emitted as CSV plot data.

#pragma once

#include <array>
#include <string>
#include <vector>

#include "denas/decoder.hpp"

namespace denas {

/// Fraction of retained cells per operator, one row per part.
std::vector<std::array<double, kNumOps>> operator_rates(const DecodedArchitecture& arch);

/// Searched part: its architecture weights and geometry.
struct SearchedPart {
  nlohmann::ordered_json archweights;
  PartSpec spec;
};

struct ResolutionRow {
  OpKind op = OpKind::skip;
  int cells = 0;
  /// Mean normalized beta (up, same, down).
  std::array<double, kNumPaths> beta_mean{};
  /// Fraction of these cells whose decoded path set contains each path.
  std::array<double, kNumPaths> selected{};
};

/// Per decoded operator, over cells that can receive all three resolutions.
std::vector<ResolutionRow> resolution_preference(const std::vector<SearchedPart>& parts);

struct ComplexityRow {
  std::string name;
  int part = 0;
  int cells = 0;
  std::size_t params = 0;
  /// Sum of table latencies in ms; NaN without a table.
  double cost_ms = 0;
};

std::vector<ComplexityRow> complexity(const DecodedArchitecture& arch, const std::string& name,
                                      const LatencyTable* table);

struct FeatureStat {
  int row = 0;
  int layer = 0;
  OpKind op = OpKind::skip;
  double mean = 0;
  double std = 0;
};

/// Every operator of every cell applied at full width to the cell's input,
/// with the cell choices pinned to the argmax of the architecture weights.
template <typename T>
std::vector<FeatureStat> operator_feature_stats(const Supernet<T>& net, ArchWeights<T>& arch,
                                                const Tensor<T>& input);

std::string rates_csv(const std::vector<std::string>& names,
                      const std::vector<std::vector<std::array<double, kNumOps>>>& rates);
std::string resolution_csv(const std::vector<ResolutionRow>& rows);
std::string complexity_csv(const std::vector<ComplexityRow>& rows);
std::string features_csv(const std::vector<std::pair<int, std::vector<FeatureStat>>>& parts);

}  // namespace denas
