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

// Lookup table of mean operator inference times.

#pragma once

#include <map>
#include <string>
#include <tuple>

#include "denas/supernet.hpp"

namespace denas {

struct LatencyKey {
  OpKind op = OpKind::conv_d1;
  int row = 0;
  int win = 0;   // input width index
  int wout = 0;  // output width index

  /// Lexicographic on (operator name, row, win, wout).
  bool operator<(const LatencyKey& o) const;
  bool operator==(const LatencyKey& o) const = default;
};

struct LatencyMeta {
  int reps = 1000;
  int warmups = 10;
  std::string host;
  std::string timestamp;
  /// N, H, W of the row-0 input.
  std::array<int, 3> input_shape{1, 32, 32};
  bool median_of_means = false;
};

class LatencyTable {
 public:
  LatencyMeta meta;

  void set(const LatencyKey& k, double mean_s);
  /// Mean seconds; throws Error for a missing key.
  double at(const LatencyKey& k) const;
  double at(OpKind op, int row, int win, int wout) const {
    return at(LatencyKey{op, row, win, wout});
  }
  bool contains(const LatencyKey& k) const { return entries_.count(k) > 0; }
  /// Throws naming the first key the spec can sample but the table lacks.
  void check_covers(const PartSpec& spec) const;
  const std::map<LatencyKey, double>& entries() const { return entries_; }

  nlohmann::ordered_json to_json() const;
  static LatencyTable from_json(const nlohmann::ordered_json& j);

 private:
  std::map<LatencyKey, double> entries_;
};

struct LatencyOptions {
  int reps = 1000;
  int warmups = 10;
  int batch = 1;
  int patch = 32;
  std::uint64_t seed = 0;
  /// Median over five group means instead of one overall mean.
  bool median_of_means = false;
};

/// Smallest observable step of the monotonic clock, in seconds.
double timer_granularity();

/// Times every (operator, row, width pair) the spec can sample, serially.
LatencyTable build_latency_table(const PartSpec& spec, const LatencyOptions& options);

}  // namespace denas
