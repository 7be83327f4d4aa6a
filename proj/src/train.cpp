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

#include "denas/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "denas/ops.hpp"
#include "denas/regularizers.hpp"

namespace denas {

void TrainConfig::validate() const {
  if (epochs < 1) throw Error("train epochs must be >= 1");
  if (warmup < 0) throw Error("train warmup must be >= 0");
  if (batch < 1) throw Error("train batch must be >= 1");
  if (!(lr_max > 0.0) || !(lr_min > 0.0) || lr_min > lr_max) throw Error("train lr bounds invalid");
}

double TrainConfig::lr(int epoch) const {
  if (epochs == 1) return lr_max;
  return cosine_lr(epoch, epochs - 1, lr_max, lr_min);
}

template <typename T>
std::vector<TrainEpoch> fit(const DenoiseFn<T>& model, const std::vector<Parameter<T>*>& params,
                            const std::vector<PatchPair>& data, const TrainConfig& config,
                            const PriorModel<T>* prior) {
  config.validate();
  if (data.empty()) throw Error("training set is empty");
  for (auto* p : params) p->set_trainable(true);
  Adam<T> opt(params);
  Rng rng(derive_seed(config.seed, 0x7a11));

  // Prior targets depend only on the fixed noisy inputs.
  std::vector<std::vector<Tensor<T>>> targets;
  if (prior && config.warmup > 0) {
    for (const auto& p : data) {
      auto f = prior->features(p.noisy.template cast<T>());
      f.erase(f.begin());
      targets.push_back(std::move(f));
    }
  }

  std::vector<int> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<TrainEpoch> history;
  for (int e = 0; e < config.epochs; ++e) {
    const bool use_dp = !targets.empty() && dp_active(e, config.warmup);
    const double lr = config.lr(e);
    std::shuffle(order.begin(), order.end(), rng.engine());
    double total = 0;
    int batches = 0;
    for (std::size_t s = 0; s < order.size(); s += config.batch) {
      std::vector<int> idx(order.begin() + s, order.begin() + std::min(order.size(), s + config.batch));
      Image noisy, clean;
      stack_batch(data, idx, noisy, clean);
      opt.zero_grad();
      Graph<T> g;
      std::vector<Var<T>> feats;
      Var<T> pred = model(g, g.input(noisy.template cast<T>()), use_dp ? &feats : nullptr);
      std::vector<Var<T>> omega;
      if (use_dp) {
        if (feats.size() != targets[0].size()) throw Error("model parts do not match the prior parts");
        for (std::size_t k = 0; k < feats.size(); ++k) {
          std::vector<Tensor<T>> items;
          for (int i : idx) items.push_back(targets[i][k]);
          const Shape one = items[0].shape();
          Tensor<T> t(Shape{static_cast<int>(idx.size()) * one.n, one.c, one.h, one.w});
          for (std::size_t b = 0; b < items.size(); ++b) {
            std::copy(items[b].data(), items[b].data() + one.numel(), t.data() + b * one.numel());
          }
          omega.push_back(g.input(std::move(t)));
        }
      } else {
        feats.clear();
      }
      Var<T> loss;
      try {
        loss = train_loss(pred, g.input(clean.template cast<T>()), feats, omega, use_dp);
        g.backward(loss);
      } catch (const NonFiniteError& ex) {
        throw NonFiniteError("training diverged at epoch " + std::to_string(e) + " (seed " +
                             std::to_string(config.seed) + "): " + ex.what());
      }
      opt.step(lr);
      total += loss.value()[0];
      ++batches;
    }
    history.push_back({e, total / batches, lr, use_dp});
  }
  return history;
}

template <typename T>
std::vector<TrainEpoch> train_model(DecodedModel<T>& model, const std::vector<PatchPair>& data,
                                    const TrainConfig& config, const PriorModel<T>* prior) {
  return fit<T>(as_denoiser(model), model.weights().all(), data, config, prior);
}

nlohmann::ordered_json EvalResult::to_json() const {
  return {{"label", label},          {"count", count},        {"psnr", psnr},
          {"ssim", ssim},            {"noisy_psnr", noisy_psnr}, {"noisy_ssim", noisy_ssim}};
}

template <typename T>
EvalResult evaluate(const DenoiseFn<T>& model, const std::vector<PatchPair>& data, const std::string& label) {
  if (data.empty()) throw Error("evaluation set is empty");
  EvalResult r;
  r.label = label;
  r.count = static_cast<int>(data.size());
  for (const auto& p : data) {
    Graph<T> g;
    const Tensor<T> out = model(g, g.input(p.noisy.template cast<T>()), nullptr).value();
    Image pred = out.template cast<double>();
    for (std::size_t i = 0; i < pred.size(); ++i) pred[i] = std::clamp(pred[i], 0.0, 1.0);
    r.psnr += psnr(pred, p.clean);
    r.ssim += ssim(pred, p.clean);
    r.noisy_psnr += psnr(p.noisy, p.clean);
    r.noisy_ssim += ssim(p.noisy, p.clean);
  }
  const double n = static_cast<double>(data.size());
  r.psnr /= n;
  r.ssim /= n;
  r.noisy_psnr /= n;
  r.noisy_ssim /= n;
  return r;
}

template <typename T>
DenoiseFn<T> as_denoiser(const DecodedModel<T>& model) {
  return [&model](Graph<T>& g, Var<T> x, std::vector<Var<T>>* f) { return model.forward(g, x, f); };
}

template <typename T>
DenoiseFn<T> as_denoiser(const ToyModel<T>& model) {
  return [&model](Graph<T>& g, Var<T> x, std::vector<Var<T>>* f) {
    if (f) f->clear();
    return model.forward(g, x);
  };
}

template <typename T>
DenoiseFn<T> as_denoiser(const PriorModel<T>& model) {
  return [&model](Graph<T>& g, Var<T> x, std::vector<Var<T>>* f) {
    if (f) f->clear();
    return model.forward(g, x);
  };
}

#define DENAS_INSTANTIATE_TRAIN(T)                                                                    \
  template std::vector<TrainEpoch> fit(const DenoiseFn<T>&, const std::vector<Parameter<T>*>&,        \
                                       const std::vector<PatchPair>&, const TrainConfig&,             \
                                       const PriorModel<T>*);                                         \
  template std::vector<TrainEpoch> train_model(DecodedModel<T>&, const std::vector<PatchPair>&,       \
                                               const TrainConfig&, const PriorModel<T>*);             \
  template EvalResult evaluate(const DenoiseFn<T>&, const std::vector<PatchPair>&, const std::string&); \
  template DenoiseFn<T> as_denoiser(const DecodedModel<T>&);                                          \
  template DenoiseFn<T> as_denoiser(const ToyModel<T>&);                                              \
  template DenoiseFn<T> as_denoiser(const PriorModel<T>&);

DENAS_INSTANTIATE_TRAIN(float)
DENAS_INSTANTIATE_TRAIN(double)

}  // namespace denas
