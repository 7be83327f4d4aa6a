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

#include "denas/search.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <thread>

#include "denas/io.hpp"
#include "denas/ops.hpp"

namespace denas {

void SearchConfig::validate() const {
  if (epochs < 1) throw Error("search epochs must be >= 1");
  if (batch < 1) throw Error("search batch must be >= 1");
  if (!(lr_w > 0.0) || !(lr_arch > 0.0)) throw Error("search learning rates must be positive");
  if (!(tau_start > 0.0) || !(tau_end > 0.0)) throw Error("temperatures must be positive");
  if (plateau_window < 1) throw Error("plateau_window must be >= 1");
  if (parts < 1 || parts > 3) throw Error("parts must be 1..3");
  if (stop_after < 0) throw Error("stop_after must be >= 0");
  loss.validate();
}

double SearchConfig::tau(int epoch) const {
  if (epochs <= 1) return tau_start;
  const double t = std::clamp(static_cast<double>(epoch) / (epochs - 1), 0.0, 1.0);
  return tau_start + (tau_end - tau_start) * t;
}

nlohmann::ordered_json SearchConfig::to_json() const {
  return {{"epochs", epochs},
          {"batch", batch},
          {"lr_w", lr_w},
          {"lr_arch", lr_arch},
          {"lambda", loss.lambda},
          {"lambda_alpha", loss.lambda_alpha},
          {"lambda_beta", loss.lambda_beta},
          {"lambda_gamma", loss.lambda_gamma},
          {"strategy", strategy_name(strategy)},
          {"alternation", alternation_name(alternation)},
          {"tau_start", tau_start},
          {"tau_end", tau_end},
          {"plateau_window", plateau_window},
          {"plateau_tol", plateau_tol},
          {"arch_init_scale", arch_init_scale},
          {"seed", seed},
          {"parts", parts}};
}

std::string_view alternation_name(Alternation a) { return a == Alternation::batch ? "batch" : "epoch"; }

Alternation parse_alternation(std::string_view s) {
  if (s == "batch") return Alternation::batch;
  if (s == "epoch") return Alternation::epoch;
  throw Error("unknown alternation '" + std::string(s) + "' (batch or epoch)");
}

PartSpec part_spec_for(const PartSpec& base, const PriorSpec& prior, int part) {
  if (part < 0 || part > 2) throw Error("part index must be 0..2");
  PartSpec s = base;
  s.in_channels = prior.part_in(part);
  s.out_channels = prior.part_out(part);
  s.validate();
  return s;
}

template <typename T>
PartData<T> prepare_part_data(const PriorModel<T>& prior, const DatasetSplit& split, int part) {
  if (part < 0 || part > 2) throw Error("part index must be 0..2");
  PartData<T> d;
  auto fill = [&](const std::vector<PatchPair>& pairs, std::vector<Tensor<T>>& in, std::vector<Tensor<T>>& tgt) {
    for (const auto& p : pairs) {
      Tensor<T> x = p.noisy.template cast<T>();
      for (int k = 0; k < part; ++k) {
        Graph<T> g;
        x = prior.forward_part(g, k, g.input(x)).value();
      }
      Graph<T> g;
      tgt.push_back(prior.forward_part(g, part, g.input(x)).value());
      in.push_back(std::move(x));
    }
  };
  fill(split.w, d.w_in, d.w_target);
  fill(split.arch, d.arch_in, d.arch_target);
  return d;
}

namespace {

template <typename T>
Tensor<T> stack(const std::vector<Tensor<T>>& items, const std::vector<int>& index) {
  const Shape one = items.at(index.at(0)).shape();
  Tensor<T> out(Shape{static_cast<int>(index.size()) * one.n, one.c, one.h, one.w});
  const std::size_t per = one.numel();
  for (std::size_t b = 0; b < index.size(); ++b) {
    const Tensor<T>& t = items.at(index[b]);
    if (t.shape() != one) throw Error("search batch mixes shapes");
    std::copy(t.data(), t.data() + per, out.data() + b * per);
  }
  return out;
}

std::vector<std::vector<int>> batches_of(std::vector<int> order, int batch) {
  std::vector<std::vector<int>> out;
  for (std::size_t s = 0; s < order.size(); s += batch) {
    out.emplace_back(order.begin() + s, order.begin() + std::min(order.size(), s + batch));
  }
  return out;
}

}  // namespace

template <typename T>
PartSearch<T>::PartSearch(int part, const PartSpec& spec, const SearchConfig& config)
    : part_(part), spec_(spec), config_(config), rng_(derive_seed(config.seed, static_cast<std::uint64_t>(part))) {
  config_.validate();
  net_ = std::make_unique<Supernet<T>>(spec_, rng_);
  arch_ = std::make_unique<ArchWeights<T>>(spec_, rng_, config_.arch_init_scale);
  opt_w_ = std::make_unique<Adam<T>>(net_->weights().all());
  opt_arch_ = std::make_unique<Adam<T>>(arch_->store().all());
}

template <typename T>
void PartSearch<T>::arch_step(const Tensor<T>& in, const Tensor<T>& target, const LatencyTable* table,
                              EpochMetrics& m, double tau) {
  net_->weights().set_trainable(false);
  arch_->store().set_trainable(true);
  arch_->store().zero_grad();
  Graph<T> g;
  ForwardOptions fo;
  fo.strategy = config_.strategy;
  fo.tau = tau;
  std::vector<CellSample> samples;
  Var<T> y = net_->forward(g, g.input(in), *arch_, rng_, fo, &samples);
  Var<T> l_dp = prior_loss(y, g.input(target));
  Var<T> l_comp;
  if (table) l_comp = comp_loss(g, *arch_, *table, config_.loss).total;
  Var<T> loss = search_loss(l_dp, l_comp, config_.loss);
  g.backward(loss);
  opt_arch_->step(config_.lr_arch);
  net_->weights().set_trainable(true);
  m.l_dp += l_dp.value()[0];
  m.l_comp += l_comp.valid() ? l_comp.value()[0] : 0.0;
  m.l_search += loss.value()[0];
  m.samples.push_back(std::move(samples));
}

template <typename T>
void PartSearch<T>::weight_step(const Tensor<T>& in, const Tensor<T>& target, double tau) {
  arch_->store().set_trainable(false);
  net_->weights().set_trainable(true);
  net_->weights().zero_grad();
  Graph<T> g;
  ForwardOptions fo;
  fo.strategy = config_.strategy;
  fo.tau = tau;
  Var<T> y = net_->forward(g, g.input(in), *arch_, rng_, fo);
  g.backward(prior_loss(y, g.input(target)));
  opt_w_->step(config_.lr_w);
  arch_->store().set_trainable(true);
}

template <typename T>
EpochMetrics PartSearch<T>::alternate_epoch(const PartData<T>& data, const LatencyTable* table) {
  if (data.w_in.empty() || data.arch_in.empty()) throw Error("search: empty data split");
  if (config_.loss.lambda > 0.0 && !table) throw Error("search: lambda > 0 needs a latency table");
  EpochMetrics m;
  m.epoch = epoch_;
  m.lr_w = config_.lr_w;
  m.lr_arch = config_.lr_arch;
  m.tau = config_.tau(epoch_);

  std::vector<int> ow(data.w_in.size()), oa(data.arch_in.size());
  std::iota(ow.begin(), ow.end(), 0);
  std::iota(oa.begin(), oa.end(), 0);
  std::shuffle(ow.begin(), ow.end(), rng_.engine());
  std::shuffle(oa.begin(), oa.end(), rng_.engine());
  const auto bw = batches_of(ow, config_.batch);
  const auto ba = batches_of(oa, config_.batch);

  try {
    auto do_arch = [&](const std::vector<int>& idx) {
      arch_step(stack(data.arch_in, idx), stack(data.arch_target, idx), table, m, m.tau);
    };
    auto do_w = [&](const std::vector<int>& idx) {
      weight_step(stack(data.w_in, idx), stack(data.w_target, idx), m.tau);
    };
    if (config_.alternation == Alternation::batch) {
      const std::size_t n = std::max(bw.size(), ba.size());
      for (std::size_t b = 0; b < n; ++b) {
        do_arch(ba[b % ba.size()]);
        do_w(bw[b % bw.size()]);
      }
    } else {
      for (const auto& idx : ba) do_arch(idx);
      for (const auto& idx : bw) do_w(idx);
    }
  } catch (const NonFiniteError& e) {
    throw NonFiniteError("search of part " + std::to_string(part_) + " diverged at epoch " +
                         std::to_string(epoch_) + " (seed " + std::to_string(config_.seed) + "): " + e.what());
  }
  const double steps = static_cast<double>(m.samples.size());
  m.l_dp /= steps;
  m.l_comp /= steps;
  m.l_search /= steps;
  if (!std::isfinite(m.l_dp) || !std::isfinite(m.l_search)) {
    throw NonFiniteError("search of part " + std::to_string(part_) + " diverged at epoch " +
                         std::to_string(epoch_) + " (seed " + std::to_string(config_.seed) + ")");
  }
  history_.push_back(m);
  ++epoch_;
  return m;
}

template <typename T>
bool PartSearch<T>::converged() const {
  const int w = config_.plateau_window;
  const int n = static_cast<int>(history_.size());
  if (n <= w) return false;
  return history_[n - 1 - w].l_dp - history_[n - 1].l_dp < config_.plateau_tol;
}

namespace {

nlohmann::ordered_json metrics_json(const EpochMetrics& m) {
  return {{"epoch", m.epoch}, {"l_dp", m.l_dp}, {"l_comp", m.l_comp}, {"l_search", m.l_search},
          {"lr_w", m.lr_w},   {"lr_arch", m.lr_arch}, {"tau", m.tau}};
}

EpochMetrics metrics_from(const nlohmann::ordered_json& j) {
  EpochMetrics m;
  m.epoch = j.at("epoch").get<int>();
  m.l_dp = j.at("l_dp").get<double>();
  m.l_comp = j.at("l_comp").get<double>();
  m.l_search = j.at("l_search").get<double>();
  m.lr_w = j.at("lr_w").get<double>();
  m.lr_arch = j.at("lr_arch").get<double>();
  m.tau = j.at("tau").get<double>();
  return m;
}

std::string metrics_csv(const std::vector<EpochMetrics>& history) {
  std::ostringstream os;
  os << "epoch,l_dp,l_comp,l_search,lr_w,lr_arch\n" << std::setprecision(12);
  for (const auto& m : history) {
    os << m.epoch << ',' << m.l_dp << ',' << m.l_comp << ',' << m.l_search << ',' << m.lr_w << ','
       << m.lr_arch << '\n';
  }
  return os.str();
}

}  // namespace

template <typename T>
nlohmann::ordered_json PartSearch<T>::checkpoint() const {
  nlohmann::ordered_json j;
  j["part"] = part_;
  j["epoch"] = epoch_;
  j["rng"] = rng_.state();
  j["weights"] = net_->weights().to_json();
  j["arch"] = arch_->store().to_json();
  j["adam_w"] = opt_w_->state_json();
  j["adam_arch"] = opt_arch_->state_json();
  auto& h = j["history"] = nlohmann::ordered_json::array();
  for (const auto& m : history_) h.push_back(metrics_json(m));
  return j;
}

template <typename T>
void PartSearch<T>::restore(const nlohmann::ordered_json& j) {
  try {
    if (j.at("part").get<int>() != part_) throw Error("checkpoint belongs to another part");
    epoch_ = j.at("epoch").get<int>();
    rng_.set_state(j.at("rng").get<std::string>());
    net_->weights().load_json(j.at("weights"));
    arch_->store().load_json(j.at("arch"));
    opt_w_->load_state_json(j.at("adam_w"));
    opt_arch_->load_state_json(j.at("adam_arch"));
    history_.clear();
    for (const auto& m : j.at("history")) history_.push_back(metrics_from(m));
  } catch (const nlohmann::json::exception& ex) {
    throw Error(std::string("malformed checkpoint: ") + ex.what());
  }
}

template <typename T>
PartOutcome search_part(int part, const PartSpec& base, const PriorModel<T>& prior, const DatasetSplit& split,
                        const LatencyTable* table, const SearchConfig& config, const std::string& run_dir) {
  config.validate();
  const PartSpec spec = part_spec_for(base, prior.spec(), part);
  if (config.loss.lambda > 0.0 && !table) throw Error("search: lambda > 0 needs a latency table");
  if (table) table->check_covers(spec);
  const PartData<T> data = prepare_part_data(prior, split, part);
  PartSearch<T> s(part, spec, config);

  const std::string dir = run_dir.empty() ? "" : run_dir + "/part" + std::to_string(part);
  nlohmann::ordered_json cfg = config.to_json();
  cfg["part"] = part;
  cfg["rows"] = spec.rows;
  cfg["cells_per_row"] = spec.cells_per_row;
  cfg["base_width"] = spec.base_width;
  cfg["in_channels"] = spec.in_channels;
  cfg["out_channels"] = spec.out_channels;
  cfg["window"] = spec.zoo.window;
  cfg["mlp_ratio"] = spec.zoo.mlp_ratio;
  if (!dir.empty()) {
    std::filesystem::create_directories(dir);
    const std::string ckpt = dir + "/checkpoint.json";
    if (file_exists(ckpt)) {
      if (!file_exists(dir + "/config.json") || read_json(dir + "/config.json").dump() != cfg.dump()) {
        throw Error("checkpoint in " + dir + " was written under a different configuration");
      }
      s.restore(read_json(ckpt));
    }
    write_json(dir + "/config.json", cfg);
  }

  PartOutcome out;
  out.part = part;
  while (s.epoch() < config.epochs && !s.converged()) {
    s.alternate_epoch(data, table);
    if (!dir.empty()) {
      write_text_atomic(dir + "/checkpoint.json", s.checkpoint().dump());
      write_text_atomic(dir + "/metrics.csv", metrics_csv(s.history()));
    }
    if (config.stop_after > 0 && s.epoch() >= config.stop_after && s.epoch() < config.epochs) {
      out.archweights = s.arch().to_json();
      out.history = s.history();
      return out;
    }
  }
  out.archweights = s.arch().to_json();
  out.archweights["part"] = part;
  out.history = s.history();
  out.finished = true;
  if (!dir.empty()) {
    write_json(dir + "/archweights.json", out.archweights);
    write_text_atomic(dir + "/metrics.csv", metrics_csv(s.history()));
  }
  return out;
}

int thread_budget() {
  if (const char* env = std::getenv("DENAS_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v >= 1) return static_cast<int>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

template <typename T>
std::vector<PartOutcome> search_all(const PartSpec& base, const PriorModel<T>& prior, const DatasetSplit& split,
                                    const LatencyTable* table, const SearchConfig& config,
                                    const std::string& run_dir, bool parallel, int max_threads) {
  config.validate();
  const int parts = config.parts;
  std::vector<PartOutcome> results(parts);
  std::vector<std::exception_ptr> errors(parts);
  auto run = [&](int i) {
    try {
      results[i] = search_part(i, base, prior, split, table, config, run_dir);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  if (parallel) {
    const int cap = std::max(1, std::min(parts, max_threads > 0 ? max_threads : thread_budget()));
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    for (int t = 0; t < cap; ++t) {
      pool.emplace_back([&] {
        for (int i = next++; i < parts; i = next++) run(i);
      });
    }
    for (auto& th : pool) th.join();
  } else {
    for (int i = 0; i < parts; ++i) run(i);
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return results;
}

template class PartSearch<float>;
template class PartSearch<double>;

#define DENAS_INSTANTIATE_SEARCH(T)                                                                \
  template PartData<T> prepare_part_data(const PriorModel<T>&, const DatasetSplit&, int);          \
  template PartOutcome search_part(int, const PartSpec&, const PriorModel<T>&, const DatasetSplit&, \
                                   const LatencyTable*, const SearchConfig&, const std::string&);   \
  template std::vector<PartOutcome> search_all(const PartSpec&, const PriorModel<T>&,              \
                                               const DatasetSplit&, const LatencyTable*,           \
                                               const SearchConfig&, const std::string&, bool, int);

DENAS_INSTANTIATE_SEARCH(float)
DENAS_INSTANTIATE_SEARCH(double)

}  // namespace denas
