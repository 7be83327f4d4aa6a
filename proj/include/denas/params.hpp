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

#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <string>
#include <vector>

#include "denas/graph.hpp"
#include "json.hpp"

namespace denas {

/// Owns the parameters of one part or model. Names are unique and
/// hierarchical ("cell_0_1/conv_d1/w"). Storage is stable, so the pointers
/// handed out stay valid for the lifetime of the store.
template <typename T>
class ParamStore {
 public:
  ParamStore() = default;
  ParamStore(const ParamStore&) = delete;
  ParamStore& operator=(const ParamStore&) = delete;

  Parameter<T>& add(const std::string& name, Tensor<T> value);
  Parameter<T>* find(const std::string& name);
  Parameter<T>& at(const std::string& name);

  std::vector<Parameter<T>*> all();
  std::size_t size() const { return params_.size(); }
  /// Total number of scalars.
  std::size_t count() const;

  void set_trainable(bool on);
  void zero_grad();

  /// {"name": {"shape": [n,c,h,w], "values": [...]}} in insertion order.
  nlohmann::ordered_json to_json() const;
  /// Overwrites the values of existing parameters; names and shapes must
  /// match exactly.
  void load_json(const nlohmann::ordered_json& j);
  /// Order-sensitive FNV-1a hash over names and value bits.
  std::uint64_t checksum() const;

 private:
  std::deque<Parameter<T>> params_;
  std::map<std::string, std::size_t> index_;
};

/// Fan-in scaled normal initialisation for a (out, in, k, k) kernel.
template <typename T>
Tensor<T> init_kernel(int out, int in, int k, Rng& rng);

extern template class ParamStore<float>;
extern template class ParamStore<double>;

}  // namespace denas
