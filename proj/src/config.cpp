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

#include "denas/config.hpp"

#include "denas/io.hpp"

namespace denas {

namespace {

using Json = nlohmann::ordered_json;

// Noise cases are stored with every field so the defaults tree names all
// accepted keys.
Json noise_json(const NoiseCase& n) {
  return {{"kind", n.kind == NoiseCase::Kind::awgn ? "awgn" : "spatial"},
          {"sigma", n.sigma * 255.0},
          {"map_case", n.map_case},
          {"map_seed", n.map_seed},
          {"clip", n.clip}};
}

NoiseCase noise_from(const Json& j, const std::string& where) {
  const Json defaults = noise_json(NoiseCase{});
  for (const auto& [k, v] : j.items()) {
    if (!defaults.contains(k)) throw UsageError("unknown config key '" + where + "." + k + "'");
  }
  Json full = j;
  if (full.value("kind", std::string("awgn")) == "awgn") {
    full.erase("map_case");
    full.erase("map_seed");
  } else {
    full.erase("sigma");
  }
  try {
    return NoiseCase::from_json(full);
  } catch (const Error& e) {
    throw UsageError(where + ": " + e.what());
  }
}

bool same_kind(const Json& a, const Json& b) {
  if (a.is_number_unsigned()) return b.is_number_unsigned();
  if (a.is_number_integer()) return b.is_number_integer();
  if (a.is_number()) return b.is_number();
  return a.type() == b.type();
}

void merge(Json& dst, const Json& src, const std::string& where) {
  if (!src.is_object()) throw UsageError("config section '" + where + "' must be an object");
  for (const auto& [k, v] : src.items()) {
    const std::string key = where.empty() ? k : where + "." + k;
    if (!dst.contains(k)) throw UsageError("unknown config key '" + key + "'");
    Json& d = dst[k];
    if (d.is_object()) {
      merge(d, v, key);
    } else if (!same_kind(d, v)) {
      throw UsageError("config key '" + key + "' expects a " + std::string(d.type_name()));
    } else {
      d = v;
    }
  }
}

Json part_json(const PartSpec& s) {
  return {{"rows", s.rows},
          {"cells_per_row", s.cells_per_row},
          {"base_width", s.base_width},
          {"window", s.zoo.window},
          {"mlp_ratio", s.zoo.mlp_ratio}};
}

template <typename V>
V get(const Json& j, const char* key) {
  return j.at(key).get<V>();
}

}  // namespace

RunConfig::RunConfig() { eval.cases = {data.noise}; }

nlohmann::ordered_json RunConfig::to_json() const {
  Json j;
  j["seed"] = seed;
  j["precision"] = precision;
  j["data"] = {{"dir", data.dir},         {"images", data.images}, {"image_size", data.image_size},
               {"seed", data.seed},       {"count", data.count},   {"patch", data.patch},
               {"split", data.split},     {"noise", noise_json(data.noise)}};
  j["part"] = part_json(part);
  j["prior"] = {{"width", prior.width},
                {"blocks", prior.blocks},
                {"epochs", prior_train.epochs},
                {"batch", prior_train.batch},
                {"lr", prior_train.lr},
                {"patience", prior_train.patience},
                {"min_gain_db", prior_train.min_gain_db}};
  j["lut"] = {{"reps", lut.reps},
              {"warmups", lut.warmups},
              {"batch", lut.batch},
              {"patch", lut.patch},
              {"median_of_means", lut.median_of_means}};
  Json s = search.to_json();
  s.erase("seed");
  j["search"] = s;
  j["train"] = {{"epochs", train.epochs},
                {"warmup", train.warmup},
                {"batch", train.batch},
                {"lr_max", train.lr_max},
                {"lr_min", train.lr_min},
                {"prior_term", train_prior_term}};
  Json cases = Json::array();
  for (const auto& c : eval.cases) cases.push_back(noise_json(c));
  j["eval"] = {{"dir", eval.dir},     {"images", eval.images}, {"image_size", eval.image_size},
               {"seed", eval.seed},   {"count", eval.count},   {"cases", cases}};
  j["spacesize"] = {{"parts", spacesize.parts}, {"ops", spacesize.ops}, {"widths", spacesize.widths}};
  j["paths"] = {{"lut", paths.lut},
                {"prior", paths.prior},
                {"run", paths.run},
                {"arch", paths.arch},
                {"model", paths.model}};
  return j;
}

RunConfig RunConfig::from_json(const nlohmann::ordered_json& in, const RunConfig& base) {
  Json j = base.to_json();
  // Arrays replace wholesale; their elements are checked below.
  Json cases;
  Json src = in;
  if (src.contains("eval") && src["eval"].is_object() && src["eval"].contains("cases")) {
    cases = src["eval"]["cases"];
    src["eval"].erase("cases");
    if (!cases.is_array() || cases.empty()) throw UsageError("eval.cases must be a non-empty array");
  }
  merge(j, src, "");

  RunConfig c;
  try {
    c.seed = get<std::uint64_t>(j, "seed");
    c.precision = get<std::string>(j, "precision");

    const Json& d = j["data"];
    c.data.dir = get<std::string>(d, "dir");
    c.data.images = get<int>(d, "images");
    c.data.image_size = get<int>(d, "image_size");
    c.data.seed = get<std::uint64_t>(d, "seed");
    c.data.count = get<int>(d, "count");
    c.data.patch = get<int>(d, "patch");
    c.data.split = get<double>(d, "split");
    c.data.noise = noise_from(d["noise"], "data.noise");

    const Json& p = j["part"];
    c.part.rows = get<int>(p, "rows");
    c.part.cells_per_row = get<int>(p, "cells_per_row");
    c.part.base_width = get<int>(p, "base_width");
    c.part.zoo.window = get<int>(p, "window");
    c.part.zoo.mlp_ratio = get<int>(p, "mlp_ratio");

    const Json& pr = j["prior"];
    c.prior.width = get<int>(pr, "width");
    c.prior.blocks = get<int>(pr, "blocks");
    c.prior_train.epochs = get<int>(pr, "epochs");
    c.prior_train.batch = get<int>(pr, "batch");
    c.prior_train.lr = get<double>(pr, "lr");
    c.prior_train.patience = get<int>(pr, "patience");
    c.prior_train.min_gain_db = get<double>(pr, "min_gain_db");

    const Json& l = j["lut"];
    c.lut.reps = get<int>(l, "reps");
    c.lut.warmups = get<int>(l, "warmups");
    c.lut.batch = get<int>(l, "batch");
    c.lut.patch = get<int>(l, "patch");
    c.lut.median_of_means = get<bool>(l, "median_of_means");

    const Json& s = j["search"];
    c.search.epochs = get<int>(s, "epochs");
    c.search.batch = get<int>(s, "batch");
    c.search.lr_w = get<double>(s, "lr_w");
    c.search.lr_arch = get<double>(s, "lr_arch");
    c.search.loss.lambda = get<double>(s, "lambda");
    c.search.loss.lambda_alpha = get<double>(s, "lambda_alpha");
    c.search.loss.lambda_beta = get<double>(s, "lambda_beta");
    c.search.loss.lambda_gamma = get<double>(s, "lambda_gamma");
    c.search.strategy = parse_strategy(get<std::string>(s, "strategy"));
    c.search.alternation = parse_alternation(get<std::string>(s, "alternation"));
    c.search.tau_start = get<double>(s, "tau_start");
    c.search.tau_end = get<double>(s, "tau_end");
    c.search.plateau_window = get<int>(s, "plateau_window");
    c.search.plateau_tol = get<double>(s, "plateau_tol");
    c.search.arch_init_scale = get<double>(s, "arch_init_scale");
    c.search.parts = get<int>(s, "parts");

    const Json& t = j["train"];
    c.train.epochs = get<int>(t, "epochs");
    c.train.warmup = get<int>(t, "warmup");
    c.train.batch = get<int>(t, "batch");
    c.train.lr_max = get<double>(t, "lr_max");
    c.train.lr_min = get<double>(t, "lr_min");
    c.train_prior_term = get<bool>(t, "prior_term");

    const Json& e = j["eval"];
    c.eval.dir = get<std::string>(e, "dir");
    c.eval.images = get<int>(e, "images");
    c.eval.image_size = get<int>(e, "image_size");
    c.eval.seed = get<std::uint64_t>(e, "seed");
    c.eval.count = get<int>(e, "count");
    if (!cases.is_null()) {
      c.eval.cases.clear();
      for (std::size_t i = 0; i < cases.size(); ++i) {
        c.eval.cases.push_back(noise_from(cases[i], "eval.cases[" + std::to_string(i) + "]"));
      }
    } else if (base.eval.cases.size() == 1 && noise_json(base.eval.cases[0]) == noise_json(base.data.noise)) {
      // Evaluation follows the training noise unless set explicitly.
      c.eval.cases = {c.data.noise};
    } else {
      c.eval.cases = base.eval.cases;
    }

    const Json& z = j["spacesize"];
    c.spacesize.parts = get<int>(z, "parts");
    c.spacesize.ops = get<int>(z, "ops");
    c.spacesize.widths = get<int>(z, "widths");

    const Json& pa = j["paths"];
    c.paths.lut = get<std::string>(pa, "lut");
    c.paths.prior = get<std::string>(pa, "prior");
    c.paths.run = get<std::string>(pa, "run");
    c.paths.arch = get<std::string>(pa, "arch");
    c.paths.model = get<std::string>(pa, "model");
  } catch (const nlohmann::json::exception& ex) {
    throw UsageError(std::string("config: ") + ex.what());
  } catch (const UsageError&) {
    throw;
  } catch (const Error& ex) {
    throw UsageError(std::string("config: ") + ex.what());
  }
  c.validate();
  return c;
}

void RunConfig::validate() const {
  auto check = [](const char* section, auto&& fn) {
    try {
      fn();
    } catch (const UsageError&) {
      throw;
    } catch (const Error& e) {
      throw UsageError(std::string("config section '") + section + "': " + e.what());
    }
  };
  if (precision != "float" && precision != "double") throw UsageError("precision must be float or double");
  if (data.images < 1 || data.image_size < data.patch || data.count < 2 || data.patch < 8) {
    throw UsageError("config section 'data': need images >= 1, count >= 2, 8 <= patch <= image_size");
  }
  if (!(data.split > 0.0 && data.split < 1.0)) throw UsageError("config section 'data': split must lie in (0, 1)");
  if (eval.images < 1 || eval.image_size < data.patch || eval.count < 2) {
    throw UsageError("config section 'eval': need images >= 1, count >= 2, image_size >= data.patch");
  }
  check("part", [&] {
    PartSpec s = part;
    s.validate();
  });
  check("prior", [&] {
    prior.validate();
    if (prior_train.epochs < 1 || prior_train.batch < 1 || !(prior_train.lr > 0.0) || prior_train.patience < 1) {
      throw Error("need epochs, batch, patience >= 1 and lr > 0");
    }
  });
  if (lut.reps < 1 || lut.warmups < 0 || lut.batch < 1 || lut.patch < 8) {
    throw UsageError("config section 'lut': need reps >= 1, warmups >= 0, batch >= 1, patch >= 8");
  }
  check("search", [&] { search.validate(); });
  check("train", [&] { train.validate(); });
  if (spacesize.parts < 1 || spacesize.ops < 1 || spacesize.widths < 1) {
    throw UsageError("config section 'spacesize': counts must be >= 1");
  }
}

DataConfig RunConfig::data_config() const {
  DataConfig d;
  d.patch = data.patch;
  d.count = data.count;
  d.split = data.split;
  d.noise = data.noise;
  d.seed = data.seed;
  return d;
}

PriorTrainConfig RunConfig::prior_config() const {
  PriorTrainConfig p = prior_train;
  p.seed = derive_seed(seed, 0x9041);
  return p;
}

LatencyOptions RunConfig::lut_options() const {
  LatencyOptions o = lut;
  o.seed = derive_seed(seed, 0x1a7);
  return o;
}

SearchConfig RunConfig::search_config() const {
  SearchConfig s = search;
  s.seed = derive_seed(seed, 0x5ea4);
  return s;
}

TrainConfig RunConfig::train_config() const {
  TrainConfig t = train;
  t.seed = derive_seed(seed, 0x7a19);
  return t;
}

RunConfig load_config(const std::string& path, const std::vector<std::string>& overrides,
                      std::vector<std::string>* log, const RunConfig& base) {
  Json j = Json::object();
  if (!path.empty()) {
    try {
      j = read_json(path);
    } catch (const std::exception& e) {
      throw UsageError("cannot read config '" + path + "': " + e.what());
    }
    if (!j.is_object()) throw UsageError("config '" + path + "' is not a JSON object");
  }
  for (const auto& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) throw UsageError("override '" + kv + "' is not key=value");
    const std::string key = kv.substr(0, eq);
    const std::string text = kv.substr(eq + 1);
    Json value = Json::parse(text, nullptr, false);
    if (value.is_discarded()) value = text;
    Json* node = &j;
    std::size_t start = 0;
    while (true) {
      const auto dot = key.find('.', start);
      const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
      if (part.empty()) throw UsageError("override '" + kv + "' has an empty key segment");
      if (dot == std::string::npos) {
        (*node)[part] = value;
        break;
      }
      Json& next = (*node)[part];
      if (next.is_null()) next = Json::object();
      if (!next.is_object()) throw UsageError("override '" + kv + "' descends into a non-object");
      node = &next;
      start = dot + 1;
    }
    if (log) log->push_back(key + " = " + value.dump());
  }
  return RunConfig::from_json(j, base);
}

RunConfig desk_config() {
  RunConfig c;
  // The default 2e-4 peak leaves a few-thousand-step desk run short of
  // convergence.
  c.train.lr_max = 1e-3;
  // On the procedural desk corpus the prior feature term costs 1-3 dB
  // against plain L1, whatever the warmup length.
  c.train.warmup = 0;
  return c;
}

RunConfig paper_config() {
  RunConfig c;
  c.part.rows = 3;
  c.part.cells_per_row = 6;
  return c;
}

RunConfig preset_config(const std::string& name) {
  if (name == "default") return RunConfig{};
  if (name == "desk") return desk_config();
  if (name == "paper") return paper_config();
  throw UsageError("unknown preset '" + name + "' (default, desk, paper)");
}

}  // namespace denas
