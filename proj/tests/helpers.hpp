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

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "denas/gradcheck.hpp"
#include "denas/ops.hpp"
#include "denas/rng.hpp"

namespace testing {

using D = double;
using denas::Graph;
using denas::Parameter;
using denas::Shape;
using denas::Tensor;
using denas::Var;

/// Owns parameters for a finite-difference probe.
struct Bag {
  std::vector<std::unique_ptr<Parameter<D>>> items;

  Parameter<D>& add(const std::string& name, Tensor<D> t) {
    items.push_back(std::make_unique<Parameter<D>>(name, std::move(t)));
    return *items.back();
  }
  Parameter<D>& randn(const std::string& name, Shape s, denas::Rng& rng,
                      double sd = 1.0) {
    return add(name, Tensor<D>::randn(s, rng, sd));
  }
  std::vector<Parameter<D>*> all() {
    std::vector<Parameter<D>*> out;
    for (auto& p : items) out.push_back(p.get());
    return out;
  }
};

/// Mean of `v` against fixed pseudo-random weights so every output element
/// carries a distinct cotangent. The mean keeps the objective O(1), which
/// keeps rounding noise well under the 1e-8 absolute floor of the check.
inline Var<D> probe(Graph<D>& g, Var<D> v, std::uint64_t seed) {
  denas::Rng rng(seed ^ 0x9e3779b97f4a7c15ULL);
  Var<D> w = g.input(Tensor<D>::randn(v.shape(), rng));
  return denas::mean(denas::mul(v, w));
}

inline double fd_error(const std::function<Var<D>(Graph<D>&)>& f,
                       const std::vector<Parameter<D>*>& params,
                       std::size_t max_entries = 0, double h = 1e-5) {
  denas::FdOptions opt;
  opt.h = h;
  opt.max_entries = max_entries;
  return denas::finite_difference_check<D>(f, params, opt).max_rel_error;
}

}  // namespace testing
