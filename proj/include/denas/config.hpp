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

// Run configuration: one JSON document plus dotted key=value overrides.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "denas/data.hpp"
#include "denas/latency.hpp"
#include "denas/prior.hpp"
#include "denas/search.hpp"
#include "denas/train.hpp"

namespace denas {

/// Bad command line, configuration or input file.
class UsageError : public Error {
 public:
  using Error::Error;
};

struct RunConfig {
  /// Drives every stochastic choice except the data below.
  std::uint64_t seed = 0;
  /// "float" or "double".
  std::string precision = "float";

  struct Data {
    /// Image directory; empty selects the procedural corpus.
    std::string dir;
    int images = 16;
    int image_size = 96;
    std::uint64_t seed = 1;
    int count = 128;
    int patch = 32;
    double split = 0.5;
    NoiseCase noise;
  } data;

  PartSpec part;
  PriorSpec prior;
  PriorTrainConfig prior_train;
  LatencyOptions lut;
  SearchConfig search;
  TrainConfig train;
  /// Add the prior feature term during the warmup epochs.
  bool train_prior_term = true;

  struct Eval {
    std::string dir;
    int images = 8;
    int image_size = 96;
    std::uint64_t seed = 77;
    int count = 64;
    std::vector<NoiseCase> cases;
  } eval;

  struct SpaceSize {
    int parts = 3;
    int ops = kNumOps;
    int widths = kNumWidths;
  } spacesize;

  struct Paths {
    std::string lut = "lut.json";
    std::string prior = "prior.json";
    std::string run = "search";
    std::string arch = "arch.json";
    std::string model = "model.json";
  } paths;

  RunConfig();

  nlohmann::ordered_json to_json() const;
  /// Strict: every key must be known; omitted keys keep their defaults.
  static RunConfig from_json(const nlohmann::ordered_json& j, const RunConfig& base = RunConfig{});
  /// Throws UsageError naming the offending section.
  void validate() const;

  // Sections with the run seed folded in.
  DataConfig data_config() const;
  PriorTrainConfig prior_config() const;
  LatencyOptions lut_options() const;
  SearchConfig search_config() const;
  TrainConfig train_config() const;
};

/// Defaults, then the file (if `path` is non-empty), then each "a.b=value"
/// override in order. Values parse as JSON, falling back to a string.
/// Each applied override is appended to `log` when given.
RunConfig load_config(const std::string& path, const std::vector<std::string>& overrides,
                      std::vector<std::string>* log = nullptr, const RunConfig& base = RunConfig{});

/// Procedural desk preset used by the end-to-end checks.
RunConfig desk_config();
/// Default with the full-size part grid (3 rows, 6 layers).
RunConfig paper_config();
/// "default", "desk" or "paper".
RunConfig preset_config(const std::string& name);

}  // namespace denas
