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
#include <functional>
#include <string>
#include <vector>

#include "denas/graph.hpp"

namespace denas {

struct FdOptions {
  double h = 1e-5;
  /// Entries probed per parameter; 0 probes every entry.
  std::size_t max_entries = 0;
  std::uint64_t seed = 0;
  /// Entries whose central difference straddles a kink are judged by the
  /// one-sided difference on the side of the evaluation point.
  double kink_tolerance = 1e-4;
  /// Denominator floor of the relative error.
  double abs_floor = 1e-8;
};

struct FdReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t checked = 0;
  std::size_t kinks = 0;
};

/// Compares reverse-mode gradients of `f` against central differences.
/// `f` records a scalar loss on the graph it receives, reading the current
/// values of `params`. Relative error is |a - n| / max(|a|, |n|, abs_floor).
/// Throws Error when two evaluations at identical parameters disagree.
template <typename T>
FdReport finite_difference_check(const std::function<Var<T>(Graph<T>&)>& f,
                                 const std::vector<Parameter<T>*>& params,
                                 const FdOptions& options = {});

extern template FdReport finite_difference_check<float>(
    const std::function<Var<float>(Graph<float>&)>&,
    const std::vector<Parameter<float>*>&, const FdOptions&);
extern template FdReport finite_difference_check<double>(
    const std::function<Var<double>(Graph<double>&)>&,
    const std::vector<Parameter<double>*>&, const FdOptions&);

}  // namespace denas
