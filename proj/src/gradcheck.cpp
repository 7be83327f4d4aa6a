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

#include "denas/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include "denas/rng.hpp"

namespace denas {
namespace {

template <typename T>
T evaluate(const std::function<Var<T>(Graph<T>&)>& f) {
  Graph<T> g;
  Var<T> loss = f(g);
  if (loss.value().size() != 1) {
    throw Error("finite_difference_check: objective is not scalar");
  }
  return loss.value()[0];
}

double relative_error(double a, double b, double floor) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

}  // namespace

template <typename T>
FdReport finite_difference_check(const std::function<Var<T>(Graph<T>&)>& f,
                                 const std::vector<Parameter<T>*>& params,
                                 const FdOptions& options) {
  if (!(options.h > 0.0)) throw Error("finite_difference_check: h must be positive");

  const T base_a = evaluate(f);
  const T base_b = evaluate(f);
  if (std::memcmp(&base_a, &base_b, sizeof(T)) != 0) {
    throw Error("finite_difference_check: objective is non-deterministic");
  }

  for (auto* p : params) p->zero_grad();
  {
    Graph<T> g;
    Var<T> loss = f(g);
    g.backward(loss);
  }

  FdReport report;
  Rng rng(options.seed);
  const T h = static_cast<T>(options.h);
  for (auto* p : params) {
    const std::size_t n = p->value().size();
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (options.max_entries > 0 && options.max_entries < n) {
      std::shuffle(idx.begin(), idx.end(), rng.engine());
      idx.resize(options.max_entries);
      std::sort(idx.begin(), idx.end());
    }
    for (std::size_t i : idx) {
      const T saved = p->value()[i];
      p->value()[i] = saved + h;
      const T up = evaluate(f);
      p->value()[i] = saved - h;
      const T down = evaluate(f);
      p->value()[i] = saved;
      const double numeric = (static_cast<double>(up) - down) / (2.0 * h);
      const double analytic = p->grad()[i];
      double rel = relative_error(analytic, numeric, options.abs_floor);
      if (rel > options.kink_tolerance) {
        // A leaky-relu kink inside [p - h, p + h] spoils the central
        // difference. At a kink the two one-sided slopes disagree, and the
        // true gradient equals one of them.
        const double plus = (static_cast<double>(up) - base_a) / h;
        const double minus = (static_cast<double>(base_a) - down) / h;
        const double one_sided = std::min(relative_error(analytic, plus, options.abs_floor),
                                          relative_error(analytic, minus, options.abs_floor));
        if (relative_error(plus, minus, options.abs_floor) > options.kink_tolerance &&
            one_sided <= options.kink_tolerance) {
          ++report.kinks;
          rel = one_sided;
        }
      }
      ++report.checked;
      if (report.checked == 1 || rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_param = p->name();
        report.worst_index = i;
        report.analytic = analytic;
        report.numeric = numeric;
      }
    }
  }
  return report;
}

template FdReport finite_difference_check<float>(
    const std::function<Var<float>(Graph<float>&)>&,
    const std::vector<Parameter<float>*>&, const FdOptions&);
template FdReport finite_difference_check<double>(
    const std::function<Var<double>(Graph<double>&)>&,
    const std::vector<Parameter<double>*>&, const FdOptions&);

}  // namespace denas
