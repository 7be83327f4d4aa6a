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

// Search and training objectives.

#pragma once

#include <vector>

#include "denas/latency.hpp"

namespace denas {

struct LossWeights {
  double lambda = 0.0;
  double lambda_alpha = 0.27;
  double lambda_beta = 0.27;
  double lambda_gamma = 0.46;

  void validate() const;
};

/// Per-decision mean costs in milliseconds for one cell, with the other
/// decisions held uniform.
struct CellCosts {
  std::vector<double> alpha;  // per operator
  std::vector<double> beta;   // per present path, menu order
  std::vector<int> beta_slots;
  std::vector<double> gamma;  // per output width
};
CellCosts cell_costs(const CellGeometry& cell, const LatencyTable& table);

/// sum_i softmax(logits)_i * costs_i.
template <typename T>
Var<T> expected_cost(Graph<T>& g, Var<T> logits, const std::vector<double>& costs);

template <typename T>
struct CompLoss {
  Var<T> total;
  Var<T> alpha;
  Var<T> beta;
  Var<T> gamma;
};

/// Lookup-table complexity cost in milliseconds, summed over cells and
/// differentiable in alpha, beta and gamma.
template <typename T>
CompLoss<T> comp_loss(Graph<T>& g, const ArchWeights<T>& arch, const LatencyTable& table,
                      const LossWeights& weights);

/// Mean squared feature distance to the frozen prior.
template <typename T>
Var<T> prior_loss(Var<T> s_out, Var<T> omega_out);

/// l_dp + lambda * l_comp. With lambda = 0 the result is l_dp itself and
/// l_comp may be left invalid.
template <typename T>
Var<T> search_loss(Var<T> l_dp, Var<T> l_comp, const LossWeights& weights);

/// Mean |pred - gt|, plus the prior distances of every (s, omega) pair
/// when use_dp is set.
template <typename T>
Var<T> train_loss(Var<T> pred, Var<T> gt, const std::vector<Var<T>>& s_out,
                  const std::vector<Var<T>>& omega_out, bool use_dp);

/// The prior term is active during the first `warmup` epochs.
inline bool dp_active(int epoch, int warmup) { return epoch < warmup; }

}  // namespace denas
