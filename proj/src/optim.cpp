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

#include "denas/optim.hpp"

#include <cmath>
#include <numbers>

namespace denas {

template <typename T>
Adam<T>::Adam(std::vector<Parameter<T>*> params, AdamOptions options)
    : params_(std::move(params)), options_(options) {
  state_.resize(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i) {
    state_[i].m.assign(params_[i]->value().size(), 0.0);
    state_[i].v.assign(params_[i]->value().size(), 0.0);
  }
}

template <typename T>
void Adam<T>::step(double lr) {
  if (!(lr > 0.0)) throw Error("Adam: learning rate must be positive");
  const double b1 = options_.beta1;
  const double b2 = options_.beta2;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Parameter<T>& p = *params_[i];
    if (!p.trainable() || !p.has_grad()) continue;
    State& s = state_[i];
    ++s.t;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(s.t));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(s.t));
    auto w = p.value().values();
    auto g = p.grad().values();
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double gk = g[k];
      s.m[k] = b1 * s.m[k] + (1.0 - b1) * gk;
      s.v[k] = b2 * s.v[k] + (1.0 - b2) * gk * gk;
      const double mhat = s.m[k] / c1;
      const double vhat = s.v[k] / c2;
      w[k] = static_cast<T>(w[k] - lr * mhat / (std::sqrt(vhat) + options_.eps));
    }
  }
}

template <typename T>
void Adam<T>::zero_grad() {
  for (auto* p : params_) p->zero_grad();
}

template <typename T>
nlohmann::ordered_json Adam<T>::state_json() const {
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < params_.size(); ++i) {
    j.push_back({{"name", params_[i]->name()}, {"t", state_[i].t}, {"m", state_[i].m}, {"v", state_[i].v}});
  }
  return j;
}

template <typename T>
void Adam<T>::load_state_json(const nlohmann::ordered_json& j) {
  if (!j.is_array() || j.size() != params_.size()) throw Error("Adam state does not match parameters");
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto& e = j[i];
    if (e.at("name").get<std::string>() != params_[i]->name()) {
      throw Error("Adam state names " + e.at("name").get<std::string>() + ", expected " +
                  params_[i]->name());
    }
    State s;
    s.t = e.at("t").get<long>();
    s.m = e.at("m").get<std::vector<double>>();
    s.v = e.at("v").get<std::vector<double>>();
    if (s.m.size() != state_[i].m.size() || s.v.size() != state_[i].v.size()) {
      throw Error("Adam state size mismatch for " + params_[i]->name());
    }
    state_[i] = std::move(s);
  }
}

double cosine_lr(int epoch, int total, double lr_max, double lr_min) {
  if (total < 1) throw Error("cosine_lr: total must be >= 1");
  if (epoch < 0 || epoch > total) {
    throw Error("cosine_lr: epoch " + std::to_string(epoch) + " outside [0, " + std::to_string(total) + "]");
  }
  return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(std::numbers::pi * epoch / total));
}

template class Adam<float>;
template class Adam<double>;

}  // namespace denas
