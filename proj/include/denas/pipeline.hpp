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

// Pipeline commands. Each reads its inputs from and writes its outputs to
// an output directory, writes the resolved configuration there as
// <command>.config.json and returns a JSON summary.

#pragma once

#include <string>
#include <vector>

#include "denas/config.hpp"
#include "denas/decoder.hpp"

namespace denas {

/// `path` unchanged when absolute, otherwise below `out`.
std::string resolve_path(const std::string& out, const std::string& path);

std::vector<Image> training_images(const RunConfig& config);
DatasetSplit training_split(const RunConfig& config);
/// Held-out pairs of one evaluation noise case.
std::vector<PatchPair> eval_pairs(const RunConfig& config, const NoiseCase& noise);

/// Refuses an existing table unless `force`.
nlohmann::ordered_json cmd_lut(const RunConfig& config, const std::string& out, bool force);
nlohmann::ordered_json cmd_prior(const RunConfig& config, const std::string& out);
/// Resumes an interrupted run unless `force`, which starts over.
nlohmann::ordered_json cmd_search(const RunConfig& config, const std::string& out, bool parallel, bool force);
/// Decodes <run_dir>/part<i>; with `random` draws a random architecture
/// from the run seed instead.
nlohmann::ordered_json cmd_decode(const RunConfig& config, const std::string& run_dir, const std::string& out,
                                  bool random = false);
nlohmann::ordered_json cmd_train(const RunConfig& config, const std::string& arch_path, const std::string& out);
nlohmann::ordered_json cmd_eval(const RunConfig& config, const std::string& model_path, const std::string& out);
/// CSV plot data for the given architectures; with a search run directory
/// also the resolution preference and the feature statistics.
nlohmann::ordered_json cmd_stats(const RunConfig& config, const std::vector<std::string>& arch_paths,
                                 const std::string& run_dir, const std::string& out);
nlohmann::ordered_json cmd_spacesize(const RunConfig& config, const std::string& out);

/// Reads a searched part from <run_dir>/part<i>.
PartSpec read_part_spec(const std::string& part_dir);

}  // namespace denas
