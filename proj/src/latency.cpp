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

#include "denas/latency.hpp"

#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <ctime>
#include <thread>

namespace denas {

bool LatencyKey::operator<(const LatencyKey& o) const {
  const auto a = op_name(op);
  const auto b = op_name(o.op);
  return std::tie(a, row, win, wout) < std::tie(b, o.row, o.win, o.wout);
}

namespace {

std::string key_str(const LatencyKey& k) {
  return std::string(op_name(k.op)) + "@row" + std::to_string(k.row) + "/" +
         std::to_string(k.win) + "->" + std::to_string(k.wout);
}

std::string host_descriptor() {
  char name[256] = {0};
  if (gethostname(name, sizeof(name) - 1) != 0) name[0] = '\0';
  return std::string(name) + " (" + std::to_string(std::thread::hardware_concurrency()) +
         " threads)";
}

std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

void LatencyTable::set(const LatencyKey& k, double mean_s) {
  if (!(mean_s > 0.0) || !std::isfinite(mean_s)) {
    throw Error("latency entry " + key_str(k) + " must be a positive time");
  }
  entries_[k] = mean_s;
}

double LatencyTable::at(const LatencyKey& k) const {
  auto it = entries_.find(k);
  if (it == entries_.end()) throw Error("latency table has no entry " + key_str(k));
  return it->second;
}

void LatencyTable::check_covers(const PartSpec& spec) const {
  for (OpKind op : kAllOps)
    for (int r = 0; r < spec.rows; ++r)
      for (int a = 0; a < kNumWidths; ++a)
        for (int b = 0; b < kNumWidths; ++b) at(LatencyKey{op, r, a, b});
}

nlohmann::ordered_json LatencyTable::to_json() const {
  nlohmann::ordered_json j;
  j["meta"] = {{"reps", meta.reps},
               {"warmups", meta.warmups},
               {"host", meta.host},
               {"timestamp", meta.timestamp},
               {"input_shape", meta.input_shape},
               {"median_of_means", meta.median_of_means}};
  auto& e = j["entries"] = nlohmann::ordered_json::array();
  for (const auto& [k, v] : entries_) {
    e.push_back({{"op", op_name(k.op)}, {"row", k.row}, {"win", k.win}, {"wout", k.wout},
                 {"mean_s", v}});
  }
  return j;
}

LatencyTable LatencyTable::from_json(const nlohmann::ordered_json& j) {
  LatencyTable t;
  try {
    const auto& m = j.at("meta");
    t.meta.reps = m.at("reps").get<int>();
    t.meta.warmups = m.at("warmups").get<int>();
    t.meta.host = m.value("host", std::string());
    t.meta.timestamp = m.value("timestamp", std::string());
    if (m.contains("input_shape")) t.meta.input_shape = m.at("input_shape").get<std::array<int, 3>>();
    t.meta.median_of_means = m.value("median_of_means", false);
    for (const auto& e : j.at("entries")) {
      LatencyKey k{parse_op(e.at("op").get<std::string>()), e.at("row").get<int>(),
                   e.at("win").get<int>(), e.at("wout").get<int>()};
      if (t.contains(k)) throw Error("duplicate latency entry " + key_str(k));
      t.set(k, e.at("mean_s").get<double>());
    }
  } catch (const nlohmann::json::exception& ex) {
    throw Error(std::string("malformed latency table: ") + ex.what());
  }
  return t;
}

double timer_granularity() {
  using clock = std::chrono::steady_clock;
  double best = 1.0;
  for (int i = 0; i < 16; ++i) {
    const auto t0 = clock::now();
    auto t1 = clock::now();
    while (t1 == t0) t1 = clock::now();
    best = std::min(best, std::chrono::duration<double>(t1 - t0).count());
  }
  return best;
}

LatencyTable build_latency_table(const PartSpec& spec, const LatencyOptions& options) {
  spec.validate();
  if (options.reps < 1) throw Error("latency table needs reps >= 1");
  if (options.warmups < 0) throw Error("latency table needs warmups >= 0");
  if (options.batch < 1 || options.patch < 1) throw Error("latency input must be non-empty");
  if (options.patch % (1 << (spec.rows - 1)) != 0) {
    throw Error("patch " + std::to_string(options.patch) + " does not halve " +
                std::to_string(spec.rows - 1) + " times");
  }
  using clock = std::chrono::steady_clock;
  const double tick = timer_granularity();

  LatencyTable table;
  table.meta.reps = options.reps;
  table.meta.warmups = options.warmups;
  table.meta.host = host_descriptor();
  table.meta.timestamp = utc_now();
  table.meta.input_shape = {options.batch, options.patch, options.patch};
  table.meta.median_of_means = options.median_of_means;

  Rng rng(options.seed);
  for (OpKind kind : kAllOps) {
    for (int r = 0; r < spec.rows; ++r) {
      const int c = spec.row_width(r);
      const int hw = options.patch >> r;
      ParamStore<float> store;
      Operator<float> op(kind, c, c, store, "lut", rng, spec.zoo, 0);
      for (int a = 0; a < kNumWidths; ++a) {
        const Tensor<float> x =
            Tensor<float>::randn(Shape{options.batch, menu_width(c, a), hw, hw}, rng);
        for (int b = 0; b < kNumWidths; ++b) {
          const int out = menu_width(c, b);
          auto run = [&] {
            Graph<float> g;
            op.apply_slim(g, g.input(x), out);
          };
          for (int i = 0; i < options.warmups; ++i) run();
          std::vector<double> times;
          times.reserve(options.reps);
          for (int i = 0; i < options.reps; ++i) {
            const auto t0 = clock::now();
            run();
            times.push_back(std::chrono::duration<double>(clock::now() - t0).count());
          }
          double mean = 0;
          if (options.median_of_means && options.reps >= 5) {
            std::vector<double> groups;
            const int per = options.reps / 5;
            for (int k = 0; k < 5; ++k) {
              double s = 0;
              for (int i = k * per; i < (k + 1) * per; ++i) s += times[i];
              groups.push_back(s / per);
            }
            std::nth_element(groups.begin(), groups.begin() + 2, groups.end());
            mean = groups[2];
          } else {
            for (double t : times) mean += t;
            mean /= options.reps;
          }
          const LatencyKey key{kind, r, a, b};
          if (mean < 10.0 * tick) {
            throw Error("timing of " + key_str(key) + " is below 10x the timer granularity (" +
                        std::to_string(tick) + " s); use a larger input");
          }
          table.set(key, mean);
        }
      }
    }
  }
  return table;
}

}  // namespace denas
