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

// Alternating optimization of operator weights and architecture weights,
// one part at a time.

#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "denas/optim.hpp"
#include "denas/prior.hpp"
#include "denas/regularizers.hpp"

namespace denas {

enum class Alternation { batch, epoch };

struct SearchConfig {
  int epochs = 30;
  int batch = 16;
  double lr_w = 2e-4;
  double lr_arch = 1e-4;
  LossWeights loss;
  CellStrategy strategy = CellStrategy::single_op;
  Alternation alternation = Alternation::batch;
  /// Gumbel temperature, annealed linearly over the epochs.
  double tau_start = 5.0;
  double tau_end = 0.5;
  /// Stop when L_dp improved by less than plateau_tol over plateau_window
  /// epochs.
  int plateau_window = 10;
  double plateau_tol = 1e-4;
  double arch_init_scale = 1e-3;
  std::uint64_t seed = 0;
  int parts = 3;
  /// Test hook: return after this many epochs as if interrupted (0: off).
  int stop_after = 0;

  void validate() const;
  double tau(int epoch) const;
  nlohmann::ordered_json to_json() const;
};

std::string_view alternation_name(Alternation a);
Alternation parse_alternation(std::string_view s);

/// Boundary features of one part, one (1, C, H, W) tensor per pair.
template <typename T>
struct PartData {
  std::vector<Tensor<T>> w_in, w_target;
  std::vector<Tensor<T>> arch_in, arch_target;
};

/// Part 0 reads the noisy image; part i > 0 reads the prior's part i-1
/// output. Targets are the prior's part i outputs.
template <typename T>
PartData<T> prepare_part_data(const PriorModel<T>& prior, const DatasetSplit& split, int part);

/// PartSpec of part i with channel counts taken from the prior boundaries.
PartSpec part_spec_for(const PartSpec& base, const PriorSpec& prior, int part);

struct EpochMetrics {
  int epoch = 0;
  double l_dp = 0;
  double l_comp = 0;
  double l_search = 0;
  double lr_w = 0;
  double lr_arch = 0;
  double tau = 0;
  /// Sampled (op, width) per cell, for every arch step of the epoch.
  std::vector<std::vector<CellSample>> samples;
};

/// Complete state of one part's search.
template <typename T>
class PartSearch {
 public:
  PartSearch(int part, const PartSpec& spec, const SearchConfig& config);

  int part() const { return part_; }
  int epoch() const { return epoch_; }
  Supernet<T>& supernet() { return *net_; }
  ArchWeights<T>& arch() { return *arch_; }
  const std::vector<EpochMetrics>& history() const { return history_; }

  /// One epoch of alternating updates; `table` may be null when lambda = 0.
  EpochMetrics alternate_epoch(const PartData<T>& data, const LatencyTable* table);
  /// Arch-weight step on one batch: descends L_search, w frozen.
  void arch_step(const Tensor<T>& in, const Tensor<T>& target, const LatencyTable* table,
                 EpochMetrics& m, double tau);
  /// Operator-weight step on one batch: descends L_dp, arch frozen.
  void weight_step(const Tensor<T>& in, const Tensor<T>& target, double tau);

  bool converged() const;

  nlohmann::ordered_json checkpoint() const;
  void restore(const nlohmann::ordered_json& j);

 private:
  int part_;
  PartSpec spec_;
  SearchConfig config_;
  Rng rng_;
  std::unique_ptr<Supernet<T>> net_;
  std::unique_ptr<ArchWeights<T>> arch_;
  std::unique_ptr<Adam<T>> opt_w_;
  std::unique_ptr<Adam<T>> opt_arch_;
  int epoch_ = 0;
  std::vector<EpochMetrics> history_;
};

struct PartOutcome {
  int part = 0;
  nlohmann::ordered_json archweights;
  std::vector<EpochMetrics> history;
  bool finished = false;
};

/// Runs (or resumes) the search of one part. With a non-empty run_dir the
/// part writes part<i>/{config.json, metrics.csv, checkpoint.json,
/// archweights.json}.
template <typename T>
PartOutcome search_part(int part, const PartSpec& base, const PriorModel<T>& prior,
                        const DatasetSplit& split, const LatencyTable* table,
                        const SearchConfig& config, const std::string& run_dir = "");

/// All parts, concurrently when `parallel` (at most max_threads at once).
/// A failing part is rethrown after the others finish; their outputs stay
/// on disk.
template <typename T>
std::vector<PartOutcome> search_all(const PartSpec& base, const PriorModel<T>& prior,
                                    const DatasetSplit& split, const LatencyTable* table,
                                    const SearchConfig& config, const std::string& run_dir,
                                    bool parallel, int max_threads = 0);

/// Thread cap from DENAS_THREADS, else the hardware concurrency.
int thread_budget();

extern template class PartSearch<float>;
extern template class PartSearch<double>;

}  // namespace denas
