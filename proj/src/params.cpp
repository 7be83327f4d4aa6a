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

#include "denas/params.hpp"

#include <cmath>
#include <cstring>

#include "denas/rng.hpp"

namespace denas {

template <typename T>
Parameter<T>& ParamStore<T>::add(const std::string& name, Tensor<T> value) {
  if (index_.count(name) != 0) throw Error("duplicate parameter name " + name);
  index_[name] = params_.size();
  params_.emplace_back(name, std::move(value));
  return params_.back();
}

template <typename T>
Parameter<T>* ParamStore<T>::find(const std::string& name) {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : &params_[it->second];
}

template <typename T>
Parameter<T>& ParamStore<T>::at(const std::string& name) {
  Parameter<T>* p = find(name);
  if (p == nullptr) throw Error("unknown parameter " + name);
  return *p;
}

template <typename T>
std::vector<Parameter<T>*> ParamStore<T>::all() {
  std::vector<Parameter<T>*> out;
  out.reserve(params_.size());
  for (auto& p : params_) out.push_back(&p);
  return out;
}

template <typename T>
std::size_t ParamStore<T>::count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value().size();
  return n;
}

template <typename T>
void ParamStore<T>::set_trainable(bool on) {
  for (auto& p : params_) p.set_trainable(on);
}

template <typename T>
void ParamStore<T>::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

template <typename T>
nlohmann::ordered_json ParamStore<T>::to_json() const {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& p : params_) {
    const Shape& s = p.value().shape();
    j[p.name()] = {{"shape", {s.n, s.c, s.h, s.w}},
                   {"values", p.value().storage()}};
  }
  return j;
}

template <typename T>
void ParamStore<T>::load_json(const nlohmann::ordered_json& j) {
  if (!j.is_object() || j.size() != params_.size()) {
    throw Error("parameter file does not match the model: expected " +
                std::to_string(params_.size()) + " tensors");
  }
  for (auto& p : params_) {
    if (!j.contains(p.name())) throw Error("parameter file lacks " + p.name());
    const auto& e = j.at(p.name());
    const auto dims = e.at("shape").template get<std::vector<int>>();
    const Shape s = p.value().shape();
    if (dims != std::vector<int>{s.n, s.c, s.h, s.w}) {
      throw Error("parameter " + p.name() + " has shape mismatch");
    }
    auto values = e.at("values").template get<std::vector<T>>();
    p.value() = Tensor<T>(s, std::move(values));
  }
}

template <typename T>
std::uint64_t ParamStore<T>::checksum() const {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const void* data, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ULL;
    }
  };
  for (const auto& p : params_) {
    mix(p.name().data(), p.name().size());
    mix(p.value().data(), p.value().size() * sizeof(T));
  }
  return h;
}

template <typename T>
Tensor<T> init_kernel(int out, int in, int k, Rng& rng) {
  const T sd = static_cast<T>(1.0 / std::sqrt(static_cast<double>(in * k * k)));
  return Tensor<T>::randn(Shape{out, in, k, k}, rng, sd);
}

template class ParamStore<float>;
template class ParamStore<double>;
template Tensor<float> init_kernel(int, int, int, Rng&);
template Tensor<double> init_kernel(int, int, int, Rng&);

}  // namespace denas
