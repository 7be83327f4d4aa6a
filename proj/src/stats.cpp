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

#include "denas/stats.hpp"

#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

namespace denas {

std::vector<std::array<double, kNumOps>> operator_rates(const DecodedArchitecture& arch) {
  std::vector<std::array<double, kNumOps>> out;
  for (const auto& p : arch.parts) {
    std::array<double, kNumOps> r{};
    if (p.cells.empty()) throw Error("part without cells");
    for (const auto& c : p.cells) r[static_cast<int>(c.op)] += 1.0;
    for (double& v : r) v /= static_cast<double>(p.cells.size());
    out.push_back(r);
  }
  return out;
}

std::vector<ResolutionRow> resolution_preference(const std::vector<SearchedPart>& parts) {
  std::vector<ResolutionRow> rows(kNumOps);
  for (int k = 0; k < kNumOps; ++k) rows[k].op = kAllOps[k];
  for (const auto& sp : parts) {
    const auto geo = part_geometry(sp.spec);
    const auto cells = decode_cells(sp.archweights, sp.spec);
    const auto& raw = sp.archweights.at("cells");
    for (std::size_t i = 0; i < geo.size(); ++i) {
      if (geo[i].num_present() != kNumPaths) continue;
      ResolutionRow& r = rows[static_cast<int>(cells[i].op)];
      const auto bar = normalized_beta(raw[i].at("beta").get<std::vector<double>>(), geo[i].has);
      for (int k = 0; k < kNumPaths; ++k) {
        r.beta_mean[k] += bar[k];
        r.selected[k] += cells[i].has(static_cast<Path>(k)) ? 1.0 : 0.0;
      }
      ++r.cells;
    }
  }
  for (auto& r : rows) {
    if (r.cells == 0) continue;
    for (int k = 0; k < kNumPaths; ++k) {
      r.beta_mean[k] /= r.cells;
      r.selected[k] /= r.cells;
    }
  }
  return rows;
}

std::vector<ComplexityRow> complexity(const DecodedArchitecture& arch, const std::string& name,
                                      const LatencyTable* table) {
  Rng rng(0);
  DecodedModel<float> model(arch, rng);
  std::vector<ComplexityRow> out;
  for (std::size_t i = 0; i < arch.parts.size(); ++i) {
    ComplexityRow r;
    r.name = name;
    r.part = static_cast<int>(i);
    r.cells = static_cast<int>(arch.parts[i].cells.size());
    const std::string pre = "part" + std::to_string(i) + "/";
    for (auto* p : model.weights().all()) {
      if (p->name().rfind(pre, 0) == 0) r.params += p->value().size();
    }
    if (table) {
      DecodedArchitecture one;
      one.parts = {arch.parts[i]};
      r.cost_ms = decoded_cost_ms(one, *table);
    } else {
      r.cost_ms = std::numeric_limits<double>::quiet_NaN();
    }
    out.push_back(r);
  }
  return out;
}

template <typename T>
std::vector<FeatureStat> operator_feature_stats(const Supernet<T>& net, ArchWeights<T>& arch,
                                                const Tensor<T>& input) {
  std::vector<CellSample> pinned;
  for (std::size_t i = 0; i < arch.size(); ++i) {
    const auto& a = arch.cell(static_cast<int>(i));
    const auto& al = a.alpha->value().storage();
    const auto& ga = a.gamma->value().storage();
    const OpChoice oc = decode_cell_and_kernel(std::vector<double>(al.begin(), al.end()),
                                               std::vector<double>(ga.begin(), ga.end()));
    pinned.push_back({static_cast<int>(oc.op), oc.width});
  }
  std::vector<Tensor<double>> inputs;
  ForwardOptions fo;
  fo.forced = &pinned;
  fo.cell_inputs = &inputs;
  Rng rng(0);
  {
    Graph<T> g;
    net.forward(g, g.input(input), arch, rng, fo);
  }
  std::vector<FeatureStat> out;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const CellGeometry& c = net.cells()[i];
    const int full = net.spec().row_width(c.row);
    for (int k = 0; k < kNumOps; ++k) {
      Graph<T> g;
      const Tensor<T> y = net.op(static_cast<int>(i), k).apply_slim(g, g.input(inputs[i].template cast<T>()), full).value();
      double s = 0, s2 = 0;
      for (std::size_t j = 0; j < y.size(); ++j) s += y[j];
      const double mean = s / y.size();
      for (std::size_t j = 0; j < y.size(); ++j) s2 += (y[j] - mean) * (y[j] - mean);
      out.push_back({c.row, c.layer, kAllOps[k], mean, std::sqrt(s2 / y.size())});
    }
  }
  return out;
}

namespace {

std::ostringstream csv_stream() {
  std::ostringstream os;
  os << std::setprecision(10);
  return os;
}

}  // namespace

std::string rates_csv(const std::vector<std::string>& names,
                      const std::vector<std::vector<std::array<double, kNumOps>>>& rates) {
  auto os = csv_stream();
  os << "arch,part";
  for (OpKind k : kAllOps) os << ',' << op_name(k);
  os << '\n';
  for (std::size_t a = 0; a < rates.size(); ++a) {
    for (std::size_t p = 0; p < rates[a].size(); ++p) {
      os << names.at(a) << ',' << p;
      for (double v : rates[a][p]) os << ',' << v;
      os << '\n';
    }
  }
  return os.str();
}

std::string resolution_csv(const std::vector<ResolutionRow>& rows) {
  auto os = csv_stream();
  os << "op,cells,beta_up,beta_same,beta_down,sel_up,sel_same,sel_down\n";
  for (const auto& r : rows) {
    os << op_name(r.op) << ',' << r.cells;
    for (double v : r.beta_mean) os << ',' << v;
    for (double v : r.selected) os << ',' << v;
    os << '\n';
  }
  return os.str();
}

std::string complexity_csv(const std::vector<ComplexityRow>& rows) {
  auto os = csv_stream();
  os << "arch,part,cells,params,cost_ms\n";
  for (const auto& r : rows) {
    os << r.name << ',' << r.part << ',' << r.cells << ',' << r.params << ',';
    if (std::isnan(r.cost_ms)) {
      os << "";
    } else {
      os << r.cost_ms;
    }
    os << '\n';
  }
  return os.str();
}

std::string features_csv(const std::vector<std::pair<int, std::vector<FeatureStat>>>& parts) {
  auto os = csv_stream();
  os << "part,row,layer,op,mean,std\n";
  for (const auto& [part, stats] : parts) {
    for (const auto& f : stats) {
      os << part << ',' << f.row << ',' << f.layer << ',' << op_name(f.op) << ',' << f.mean << ',' << f.std << '\n';
    }
  }
  return os.str();
}

template std::vector<FeatureStat> operator_feature_stats(const Supernet<float>&, ArchWeights<float>&,
                                                         const Tensor<float>&);
template std::vector<FeatureStat> operator_feature_stats(const Supernet<double>&, ArchWeights<double>&,
                                                         const Tensor<double>&);

}  // namespace denas
