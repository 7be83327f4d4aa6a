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

// Small fixed 3-part residual CNN used as the frozen denoising prior.

#pragma once

#include <array>
#include <memory>
#include <vector>

#include "denas/data.hpp"
#include "denas/params.hpp"
#include "denas/rng.hpp"

namespace denas {

struct PriorSpec {
  int width = 16;
  int blocks = 2;
  int channels = 3;

  void validate() const;
  /// Channels entering and leaving part i.
  int part_in(int i) const { return i == 0 ? channels : width; }
  int part_out(int i) const { return i == 2 ? channels : width; }
};

template <typename T>
class PriorModel {
 public:
  static constexpr int kParts = 3;

  PriorModel(const PriorSpec& spec, Rng& rng);

  const PriorSpec& spec() const { return spec_; }
  ParamStore<T>& weights() { return store_; }
  const ParamStore<T>& weights() const { return store_; }

  Var<T> forward_part(Graph<T>& g, int part, Var<T> x) const;
  /// x + part2(part1(part0(x))).
  Var<T> forward(Graph<T>& g, Var<T> x) const;

  /// Boundary features [x, part0, part1, part2] without gradients.
  std::vector<Tensor<T>> features(const Tensor<T>& x) const;
  /// Output shape of part i for an (n, channels, h, w) input.
  Shape part_shape(int part, int n, int h, int w) const;

  void freeze() { store_.set_trainable(false); }

  nlohmann::ordered_json to_json() const;
  static std::unique_ptr<PriorModel> from_json(const nlohmann::ordered_json& j);

 private:
  PriorSpec spec_;
  ParamStore<T> store_;
  // Per part: head conv (w, b), then blocks x (w1, b1, w2, b2), then the
  // output conv of part 2.
  std::array<std::vector<Parameter<T>*>, kParts> parts_;
};

struct PriorTrainConfig {
  int epochs = 40;
  int batch = 16;
  double lr = 1e-3;
  int patience = 5;        // epochs without a validation gain
  double min_gain_db = 0.05;
  std::uint64_t seed = 0;
};

struct PriorEpoch {
  int epoch = 0;
  double loss = 0;
  double val_psnr = 0;
};

/// Trains on split.w with L1, validates on split.arch and stops at the
/// validation plateau; the best epoch's weights are kept and frozen.
template <typename T>
std::vector<PriorEpoch> train_prior(PriorModel<T>& model, const DatasetSplit& split,
                                    const PriorTrainConfig& config);

/// Mean PSNR of model(noisy) against clean over the pairs.
template <typename T>
double prior_psnr(const PriorModel<T>& model, const std::vector<PatchPair>& pairs);

extern template class PriorModel<float>;
extern template class PriorModel<double>;

}  // namespace denas
