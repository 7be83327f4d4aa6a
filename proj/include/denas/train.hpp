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

// Training from scratch and evaluation of denoisers.

#pragma once

#include <functional>
#include <string>
#include <vector>

#include "denas/decoder.hpp"
#include "denas/optim.hpp"
#include "denas/prior.hpp"

namespace denas {

struct TrainConfig {
  int epochs = 60;
  /// Epochs that add the prior feature term to L1.
  int warmup = 20;
  int batch = 16;
  double lr_max = 2e-4;
  double lr_min = 1e-6;
  std::uint64_t seed = 0;

  void validate() const;
  /// Cosine schedule reaching lr_min at the final epoch.
  double lr(int epoch) const;
};

struct TrainEpoch {
  int epoch = 0;
  double loss = 0;
  double lr = 0;
  bool prior_term = false;
};

/// Maps a noisy batch to a prediction; `features` receives the part outputs
/// when the model has parts (may be null).
template <typename T>
using DenoiseFn = std::function<Var<T>(Graph<T>&, Var<T>, std::vector<Var<T>>*)>;

/// Adam over `params`, batches reshuffled each epoch. With a prior, the
/// first `warmup` epochs add L_dp between the model's part outputs and the
/// prior's part outputs on the same noisy input.
template <typename T>
std::vector<TrainEpoch> fit(const DenoiseFn<T>& model, const std::vector<Parameter<T>*>& params,
                            const std::vector<PatchPair>& data, const TrainConfig& config,
                            const PriorModel<T>* prior = nullptr);

template <typename T>
std::vector<TrainEpoch> train_model(DecodedModel<T>& model, const std::vector<PatchPair>& data,
                                    const TrainConfig& config, const PriorModel<T>* prior = nullptr);

struct EvalResult {
  std::string label;
  int count = 0;
  double psnr = 0;
  double ssim = 0;
  double noisy_psnr = 0;
  double noisy_ssim = 0;
  nlohmann::ordered_json to_json() const;
};

/// Mean PSNR/SSIM of the model output against clean targets, one image at a
/// time, outputs clamped to [0, 1].
template <typename T>
EvalResult evaluate(const DenoiseFn<T>& model, const std::vector<PatchPair>& data, const std::string& label);

template <typename T>
DenoiseFn<T> as_denoiser(const DecodedModel<T>& model);
template <typename T>
DenoiseFn<T> as_denoiser(const ToyModel<T>& model);
template <typename T>
DenoiseFn<T> as_denoiser(const PriorModel<T>& model);

}  // namespace denas
