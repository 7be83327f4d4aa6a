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

#include <vector>

#include "denas/params.hpp"

namespace denas {

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam with per-parameter step counts. Parameters that
/// received no gradient since zero_grad() are skipped entirely, so operators
/// left unsampled by a single-operator step keep both value and state.
template <typename T>
class Adam {
 public:
  explicit Adam(std::vector<Parameter<T>*> params, AdamOptions options = {});

  void step(double lr);
  void zero_grad();
  const std::vector<Parameter<T>*>& params() const { return params_; }
  long steps(std::size_t i) const { return state_.at(i).t; }

  nlohmann::ordered_json state_json() const;
  void load_state_json(const nlohmann::ordered_json& j);

 private:
  struct State {
    std::vector<double> m;
    std::vector<double> v;
    long t = 0;
  };
  std::vector<Parameter<T>*> params_;
  std::vector<State> state_;
  AdamOptions options_;
};

/// lr_min + (lr_max - lr_min) * (1 + cos(pi * epoch / total)) / 2.
double cosine_lr(int epoch, int total, double lr_max = 2e-4, double lr_min = 1e-6);

extern template class Adam<float>;
extern template class Adam<double>;

}  // namespace denas
