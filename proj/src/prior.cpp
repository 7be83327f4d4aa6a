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

#include "denas/prior.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "denas/ops.hpp"
#include "denas/optim.hpp"

namespace denas {

void PriorSpec::validate() const {
  if (width < 1 || blocks < 0 || channels < 1) throw Error("prior needs width >= 1, blocks >= 0, channels >= 1");
}

template <typename T>
PriorModel<T>::PriorModel(const PriorSpec& spec, Rng& rng) : spec_(spec) {
  spec_.validate();
  auto conv = [&](int p, const std::string& name, int out, int in, double gain) {
    Tensor<T> w = init_kernel<T>(out, in, 3, rng);
    for (auto& v : w.values()) v = static_cast<T>(v * gain);
    const std::string base = "prior" + std::to_string(p) + "/" + name;
    parts_[p].push_back(&store_.add(base + "_w", std::move(w)));
    parts_[p].push_back(&store_.add(base + "_b", Tensor<T>(Shape{out, 1, 1, 1})));
  };
  for (int p = 0; p < kParts; ++p) {
    conv(p, "head", spec_.width, spec_.part_in(p), 1.0);
    for (int b = 0; b < spec_.blocks; ++b) {
      conv(p, "block" + std::to_string(b) + "a", spec_.width, spec_.width, 1.0);
      conv(p, "block" + std::to_string(b) + "b", spec_.width, spec_.width, 0.1);
    }
    if (p == kParts - 1) conv(p, "out", spec_.channels, spec_.width, 0.1);
  }
}

template <typename T>
Var<T> PriorModel<T>::forward_part(Graph<T>& g, int part, Var<T> x) const {
  if (part < 0 || part >= kParts) throw Error("prior part must be 0..2");
  if (x.shape().c != spec_.part_in(part)) {
    throw Error("prior part " + std::to_string(part) + " expects " + std::to_string(spec_.part_in(part)) +
                " channels, got " + x.shape().str());
  }
  const auto& ps = parts_[part];
  auto conv = [&](Var<T> v, std::size_t i) {
    return conv2d(v, g.param(*ps[i]), std::optional<Var<T>>(g.param(*ps[i + 1])), 1, 1, 1);
  };
  Var<T> h = leaky_relu(conv(x, 0));
  std::size_t i = 2;
  for (int b = 0; b < spec_.blocks; ++b, i += 4) h = add(h, conv(leaky_relu(conv(h, i)), i + 2));
  if (part == kParts - 1) h = conv(h, i);
  return h;
}

template <typename T>
Var<T> PriorModel<T>::forward(Graph<T>& g, Var<T> x) const {
  Var<T> h = x;
  for (int p = 0; p < kParts; ++p) h = forward_part(g, p, h);
  return add(x, h);
}

template <typename T>
std::vector<Tensor<T>> PriorModel<T>::features(const Tensor<T>& x) const {
  std::vector<Tensor<T>> out{x};
  for (int p = 0; p < kParts; ++p) {
    Graph<T> g;
    out.push_back(forward_part(g, p, g.input(out.back())).value());
  }
  return out;
}

template <typename T>
Shape PriorModel<T>::part_shape(int part, int n, int h, int w) const {
  return Shape{n, spec_.part_out(part), h, w};
}

template <typename T>
nlohmann::ordered_json PriorModel<T>::to_json() const {
  nlohmann::ordered_json j;
  j["spec"] = {{"width", spec_.width}, {"blocks", spec_.blocks}, {"channels", spec_.channels}};
  auto& b = j["boundaries"] = nlohmann::ordered_json::array();
  for (int p = 0; p < kParts; ++p) b.push_back({{"in", spec_.part_in(p)}, {"out", spec_.part_out(p)}});
  j["params"] = store_.to_json();
  return j;
}

template <typename T>
std::unique_ptr<PriorModel<T>> PriorModel<T>::from_json(const nlohmann::ordered_json& j) {
  PriorSpec s;
  try {
    s.width = j.at("spec").at("width").get<int>();
    s.blocks = j.at("spec").at("blocks").get<int>();
    s.channels = j.at("spec").at("channels").get<int>();
  } catch (const nlohmann::json::exception& ex) {
    throw Error(std::string("malformed prior file: ") + ex.what());
  }
  Rng rng(0);
  auto m = std::make_unique<PriorModel>(s, rng);
  m->store_.load_json(j.at("params"));
  m->freeze();
  return m;
}

template <typename T>
double prior_psnr(const PriorModel<T>& model, const std::vector<PatchPair>& pairs) {
  if (pairs.empty()) throw Error("prior_psnr: no pairs");
  double total = 0;
  for (const auto& p : pairs) {
    Graph<T> g;
    Var<T> y = model.forward(g, g.input(p.noisy.template cast<T>()));
    total += psnr(y.value().template cast<double>(), p.clean);
  }
  return total / pairs.size();
}

template <typename T>
std::vector<PriorEpoch> train_prior(PriorModel<T>& model, const DatasetSplit& split,
                                    const PriorTrainConfig& config) {
  if (split.w.empty() || split.arch.empty()) throw Error("train_prior: empty split");
  if (config.epochs < 1 || config.batch < 1 || !(config.lr > 0)) throw Error("train_prior: bad config");
  model.weights().set_trainable(true);
  Adam<T> opt(model.weights().all());
  Rng rng(derive_seed(config.seed, 0x9121));
  std::vector<int> order(split.w.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<PriorEpoch> history;
  double best = -1e300;
  nlohmann::ordered_json best_params = model.weights().to_json();
  int stale = 0;
  for (int e = 0; e < config.epochs; ++e) {
    std::shuffle(order.begin(), order.end(), rng.engine());
    double loss_sum = 0;
    int batches = 0;
    for (std::size_t s = 0; s < order.size(); s += config.batch) {
      std::vector<int> idx(order.begin() + s, order.begin() + std::min(order.size(), s + config.batch));
      Image noisy, clean;
      stack_batch(split.w, idx, noisy, clean);
      opt.zero_grad();
      Graph<T> g;
      Var<T> loss = l1_loss(model.forward(g, g.input(noisy.template cast<T>())), g.input(clean.template cast<T>()));
      g.backward(loss);
      opt.step(config.lr);
      loss_sum += loss.value()[0];
      ++batches;
    }
    PriorEpoch rec{e, loss_sum / batches, prior_psnr(model, split.arch)};
    history.push_back(rec);
    if (!std::isfinite(rec.loss)) throw NonFiniteError("prior training diverged at epoch " + std::to_string(e));
    if (rec.val_psnr > best + config.min_gain_db) {
      best = rec.val_psnr;
      best_params = model.weights().to_json();
      stale = 0;
    } else if (++stale >= config.patience) {
      break;
    }
  }
  model.weights().load_json(best_params);
  model.freeze();
  return history;
}

template class PriorModel<float>;
template class PriorModel<double>;
template std::vector<PriorEpoch> train_prior(PriorModel<float>&, const DatasetSplit&, const PriorTrainConfig&);
template std::vector<PriorEpoch> train_prior(PriorModel<double>&, const DatasetSplit&, const PriorTrainConfig&);
template double prior_psnr(const PriorModel<float>&, const std::vector<PatchPair>&);
template double prior_psnr(const PriorModel<double>&, const std::vector<PatchPair>&);

}  // namespace denas
