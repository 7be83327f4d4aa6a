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

#include "denas/regularizers.hpp"

#include <cmath>

#include "denas/ops.hpp"

namespace denas {

void LossWeights::validate() const {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw Error("lambda must be >= 0");
  for (double w : {lambda_alpha, lambda_beta, lambda_gamma}) {
    if (!(w >= 0.0)) throw Error("complexity weights must be >= 0");
  }
  if (std::abs(lambda_alpha + lambda_beta + lambda_gamma - 1.0) > 1e-12) {
    throw Error("complexity weights must sum to 1");
  }
}

CellCosts cell_costs(const CellGeometry& cell, const LatencyTable& table) {
  constexpr double ms = 1e3;
  const double pairs = kNumWidths * kNumWidths;
  auto row_mean = [&](int row) {
    double s = 0;
    for (OpKind op : kAllOps)
      for (int a = 0; a < kNumWidths; ++a)
        for (int b = 0; b < kNumWidths; ++b) s += table.at(op, row, a, b);
    return ms * s / (kNumOps * pairs);
  };
  CellCosts c;
  for (OpKind op : kAllOps) {
    double s = 0;
    for (int a = 0; a < kNumWidths; ++a)
      for (int b = 0; b < kNumWidths; ++b) s += table.at(op, cell.row, a, b);
    c.alpha.push_back(ms * s / pairs);
  }
  const int source_row[kNumPaths] = {cell.row + 1, cell.row, cell.row - 1};
  for (int k = 0; k < kNumPaths; ++k) {
    if (!cell.has[k]) continue;
    c.beta_slots.push_back(k);
    c.beta.push_back(row_mean(source_row[k]));
  }
  for (int b = 0; b < kNumWidths; ++b) {
    double s = 0;
    for (OpKind op : kAllOps)
      for (int a = 0; a < kNumWidths; ++a) s += table.at(op, cell.row, a, b);
    c.gamma.push_back(ms * s / (kNumOps * kNumWidths));
  }
  return c;
}

template <typename T>
Var<T> expected_cost(Graph<T>& g, Var<T> logits, const std::vector<double>& costs) {
  if (logits.value().size() != costs.size()) {
    throw Error("expected_cost: " + std::to_string(logits.value().size()) + " logits for " +
                std::to_string(costs.size()) + " costs");
  }
  std::vector<T> t(costs.begin(), costs.end());
  Var<T> c = g.input(Tensor<T>(logits.shape(), std::move(t)));
  return sum(mul(softmax(logits), c));
}

template <typename T>
CompLoss<T> comp_loss(Graph<T>& g, const ArchWeights<T>& arch, const LatencyTable& table,
                      const LossWeights& weights) {
  weights.validate();
  CompLoss<T> out;
  auto accumulate = [](Var<T>& acc, Var<T> term) { acc = acc.valid() ? add(acc, term) : term; };
  for (std::size_t i = 0; i < arch.size(); ++i) {
    const CellGeometry& geo = arch.geometry()[i];
    const CellArch<T>& a = arch.cell(static_cast<int>(i));
    const CellCosts c = cell_costs(geo, table);
    accumulate(out.alpha, expected_cost(g, g.param(*a.alpha), c.alpha));
    Var<T> beta = gather(g.param(*a.beta), std::span<const int>(c.beta_slots));
    accumulate(out.beta, expected_cost(g, beta, c.beta));
    accumulate(out.gamma, expected_cost(g, g.param(*a.gamma), c.gamma));
  }
  if (!out.alpha.valid()) throw Error("comp_loss: empty architecture");
  out.total = add(add(scale(out.alpha, T(weights.lambda_alpha)), scale(out.beta, T(weights.lambda_beta))),
                  scale(out.gamma, T(weights.lambda_gamma)));
  return out;
}

template <typename T>
Var<T> prior_loss(Var<T> s_out, Var<T> omega_out) {
  if (s_out.shape() != omega_out.shape()) {
    throw Error("prior_loss: shape " + s_out.shape().str() + " vs prior " + omega_out.shape().str());
  }
  return mse_loss(s_out, omega_out);
}

template <typename T>
Var<T> search_loss(Var<T> l_dp, Var<T> l_comp, const LossWeights& weights) {
  weights.validate();
  if (weights.lambda == 0.0) return l_dp;
  return add(l_dp, scale(l_comp, T(weights.lambda)));
}

template <typename T>
Var<T> train_loss(Var<T> pred, Var<T> gt, const std::vector<Var<T>>& s_out,
                  const std::vector<Var<T>>& omega_out, bool use_dp) {
  if (pred.shape() != gt.shape()) {
    throw Error("train_loss: prediction " + pred.shape().str() + " vs target " + gt.shape().str());
  }
  Var<T> loss = l1_loss(pred, gt);
  if (!use_dp) return loss;
  if (s_out.size() != omega_out.size()) throw Error("train_loss: unpaired prior features");
  for (std::size_t i = 0; i < s_out.size(); ++i) loss = add(loss, prior_loss(s_out[i], omega_out[i]));
  return loss;
}

#define DENAS_INSTANTIATE_REG(T)                                                               \
  template Var<T> expected_cost(Graph<T>&, Var<T>, const std::vector<double>&);                \
  template CompLoss<T> comp_loss(Graph<T>&, const ArchWeights<T>&, const LatencyTable&,        \
                                 const LossWeights&);                                          \
  template Var<T> prior_loss(Var<T>, Var<T>);                                                  \
  template Var<T> search_loss(Var<T>, Var<T>, const LossWeights&);                             \
  template Var<T> train_loss(Var<T>, Var<T>, const std::vector<Var<T>>&,                       \
                             const std::vector<Var<T>>&, bool);

DENAS_INSTANTIATE_REG(float)
DENAS_INSTANTIATE_REG(double)

}  // namespace denas
