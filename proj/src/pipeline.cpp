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

#include "denas/pipeline.hpp"

#include <filesystem>
#include <iostream>
#include <sstream>

#include "denas/io.hpp"
#include "denas/stats.hpp"

namespace denas {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

std::string resolve_path(const std::string& out, const std::string& path) {
  if (path.empty() || fs::path(path).is_absolute() || out.empty()) return path;
  return (fs::path(out) / path).string();
}

namespace {

void prepare_out(const RunConfig& config, const std::string& out, const char* command) {
  if (out.empty()) throw UsageError("no output directory");
  fs::create_directories(out);
  write_json(resolve_path(out, std::string(command) + ".config.json"), config.to_json());
}

// Paths recorded in reports are relative to the output directory so that
// reruns elsewhere produce identical files.
std::string relative_to(const std::string& out, const std::string& path) {
  return fs::weakly_canonical(path).lexically_relative(fs::weakly_canonical(out)).generic_string();
}

Json read_input(const std::string& path, const char* what) {
  if (!file_exists(path)) throw UsageError(std::string(what) + " not found: " + path);
  try {
    return read_json(path);
  } catch (const std::exception& e) {
    throw UsageError(std::string("malformed ") + what + " '" + path + "': " + e.what());
  }
}

template <typename T>
std::unique_ptr<PriorModel<T>> load_prior(const RunConfig& config, const std::string& out) {
  const std::string path = resolve_path(out, config.paths.prior);
  const Json j = read_input(path, "prior");
  try {
    return PriorModel<T>::from_json(j);
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
}

std::vector<PatchPair> all_pairs(const DatasetSplit& s) {
  std::vector<PatchPair> v = s.w;
  v.insert(v.end(), s.arch.begin(), s.arch.end());
  return v;
}

template <typename T>
Json evaluate_cases(const DenoiseFn<T>& model, const RunConfig& config) {
  Json cases = Json::array();
  for (const auto& n : config.eval.cases) cases.push_back(evaluate(model, eval_pairs(config, n), n.label()).to_json());
  return cases;
}

template <typename F>
auto by_precision(const RunConfig& config, F&& f) {
  if (config.precision == "double") return f(double{});
  return f(float{});
}

// ---------------------------------------------------------------------------

template <typename T>
Json prior_impl(const RunConfig& config, const std::string& out) {
  const DatasetSplit split = training_split(config);
  PriorSpec spec = config.prior;
  spec.channels = split.w.front().clean.shape().c;
  Rng rng(derive_seed(config.seed, 0x9040));
  PriorModel<T> model(spec, rng);
  const auto history = train_prior(model, split, config.prior_config());
  write_json(resolve_path(out, config.paths.prior), model.to_json());

  std::ostringstream csv;
  csv << "epoch,loss,val_psnr\n";
  csv.precision(17);
  for (const auto& e : history) csv << e.epoch << ',' << e.loss << ',' << e.val_psnr << '\n';
  write_text_atomic(resolve_path(out, "prior_metrics.csv"), csv.str());

  double noisy = 0;
  for (const auto& p : split.arch) noisy += psnr(p.noisy, p.clean);
  Json shapes = Json::array();
  for (int i = 0; i < PriorModel<T>::kParts; ++i) {
    const Shape s = model.part_shape(i, 1, config.data.patch, config.data.patch);
    shapes.push_back({{"part", i}, {"in", spec.part_in(i)}, {"out", s.c}, {"h", s.h}, {"w", s.w}});
  }
  Json r;
  r["epochs"] = history.size();
  r["val_psnr"] = prior_psnr(model, split.arch);
  r["noisy_psnr"] = noisy / static_cast<double>(split.arch.size());
  r["boundaries"] = shapes;
  write_json(resolve_path(out, "prior_report.json"), r);
  return r;
}

template <typename T>
Json search_impl(const RunConfig& config, const std::string& out, bool parallel, bool force) {
  const auto prior = load_prior<T>(config, out);
  const DatasetSplit split = training_split(config);
  std::unique_ptr<LatencyTable> table;
  const std::string lut = resolve_path(out, config.paths.lut);
  if (file_exists(lut)) {
    table = std::make_unique<LatencyTable>(LatencyTable::from_json(read_input(lut, "latency table")));
  } else if (config.search.loss.lambda > 0.0) {
    throw UsageError("search.lambda > 0 needs a latency table at " + lut);
  }
  const std::string run_dir = resolve_path(out, config.paths.run);
  if (force) fs::remove_all(run_dir);
  const auto outcomes = search_all(config.part, *prior, split, table.get(), config.search_config(), run_dir, parallel);
  Json parts = Json::array();
  for (const auto& o : outcomes) {
    Json p = {{"part", o.part}, {"finished", o.finished}, {"epochs", o.history.size()}};
    if (!o.history.empty()) {
      p["l_dp"] = o.history.back().l_dp;
      p["l_comp"] = o.history.back().l_comp;
    }
    parts.push_back(p);
  }
  return {{"run", run_dir}, {"parts", parts}};
}

template <typename T>
Json train_impl(const RunConfig& config, const std::string& arch_path, const std::string& out) {
  DecodedArchitecture arch;
  try {
    arch = DecodedArchitecture::from_json(read_input(arch_path, "architecture"));
  } catch (const UsageError&) {
    throw;
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  std::unique_ptr<PriorModel<T>> prior;
  if (config.train_prior_term && config.train.warmup > 0) prior = load_prior<T>(config, out);
  Rng rng(derive_seed(config.seed, 0x3ede1));
  DecodedModel<T> model(arch, rng);
  const auto history = train_model(model, all_pairs(training_split(config)), config.train_config(), prior.get());
  write_json(resolve_path(out, config.paths.model), model.to_json());

  std::ostringstream csv;
  csv << "epoch,loss,lr,prior_term\n";
  csv.precision(17);
  for (const auto& e : history) csv << e.epoch << ',' << e.loss << ',' << e.lr << ',' << e.prior_term << '\n';
  write_text_atomic(resolve_path(out, "train_metrics.csv"), csv.str());

  Json r;
  r["architecture"] = relative_to(out, arch_path);
  r["params"] = model.weights().count();
  r["epochs"] = history.size();
  r["final_loss"] = history.back().loss;
  r["cases"] = evaluate_cases(as_denoiser(model), config);
  write_json(resolve_path(out, "report.json"), r);
  return r;
}

template <typename T>
Json eval_impl(const RunConfig& config, const std::string& model_path, const std::string& out) {
  std::unique_ptr<DecodedModel<T>> model;
  try {
    model = DecodedModel<T>::from_json(read_input(model_path, "model"));
  } catch (const UsageError&) {
    throw;
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  Json r;
  r["model"] = relative_to(out, model_path);
  r["params"] = model->weights().count();
  r["cases"] = evaluate_cases(as_denoiser(*model), config);
  write_json(resolve_path(out, "eval.json"), r);
  return r;
}

}  // namespace

std::vector<Image> training_images(const RunConfig& config) {
  if (!config.data.dir.empty()) {
    auto v = load_image_dir(config.data.dir);
    if (v.empty()) throw UsageError("no images in " + config.data.dir);
    return v;
  }
  return procedural_corpus(config.data.images, config.data.image_size, config.data.seed);
}

DatasetSplit training_split(const RunConfig& config) {
  return make_dataset(training_images(config), config.data_config());
}

std::vector<PatchPair> eval_pairs(const RunConfig& config, const NoiseCase& noise) {
  std::vector<Image> images;
  if (!config.eval.dir.empty()) {
    images = load_image_dir(config.eval.dir);
    if (images.empty()) throw UsageError("no images in " + config.eval.dir);
  } else {
    images = procedural_corpus(config.eval.images, config.eval.image_size, config.eval.seed);
  }
  DataConfig d;
  d.patch = config.data.patch;
  d.count = config.eval.count;
  d.noise = noise;
  d.seed = config.eval.seed;
  return all_pairs(make_dataset(images, d));
}

PartSpec read_part_spec(const std::string& part_dir) {
  const Json c = read_input(part_dir + "/config.json", "part configuration");
  try {
    PartSpec s;
    s.rows = c.at("rows").get<int>();
    s.cells_per_row = c.at("cells_per_row").get<int>();
    s.base_width = c.at("base_width").get<int>();
    s.in_channels = c.at("in_channels").get<int>();
    s.out_channels = c.at("out_channels").get<int>();
    s.zoo.window = c.value("window", s.zoo.window);
    s.zoo.mlp_ratio = c.value("mlp_ratio", s.zoo.mlp_ratio);
    s.validate();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw UsageError("malformed " + part_dir + "/config.json: " + e.what());
  } catch (const Error& e) {
    throw UsageError("malformed " + part_dir + "/config.json: " + e.what());
  }
}

Json cmd_lut(const RunConfig& config, const std::string& out, bool force) {
  const std::string path = resolve_path(out, config.paths.lut);
  if (file_exists(path) && !force) throw UsageError(path + " exists; pass --force to rebuild it");
  prepare_out(config, out, "lut");
  const LatencyTable table = build_latency_table(config.part, config.lut_options());
  write_json(path, table.to_json());
  return {{"table", path}, {"entries", table.to_json().at("entries").size()}, {"reps", table.meta.reps}};
}

Json cmd_prior(const RunConfig& config, const std::string& out) {
  prepare_out(config, out, "prior");
  return by_precision(config, [&](auto t) { return prior_impl<decltype(t)>(config, out); });
}

Json cmd_search(const RunConfig& config, const std::string& out, bool parallel, bool force) {
  prepare_out(config, out, "search");
  return by_precision(config, [&](auto t) { return search_impl<decltype(t)>(config, out, parallel, force); });
}

Json cmd_decode(const RunConfig& config, const std::string& run_dir, const std::string& out, bool random) {
  prepare_out(config, out, "decode");
  std::vector<DecodedPart> parts;
  if (random) {
    Rng rng(derive_seed(config.seed, 0xdec0));
    PriorSpec prior = config.prior;
    prior.channels = 3;
    for (int i = 0; i < 3; ++i) parts.push_back(random_part(part_spec_for(config.part, prior, i), rng));
  } else {
    const std::string dir = run_dir.empty() ? resolve_path(out, config.paths.run) : run_dir;
    if (!fs::is_directory(dir)) throw UsageError("run directory not found: " + dir);
    for (int i = 0; fs::exists(dir + "/part" + std::to_string(i)); ++i) {
      const std::string pd = dir + "/part" + std::to_string(i);
      const PartSpec spec = read_part_spec(pd);
      const Json aw = read_input(pd + "/archweights.json", "architecture weights");
      try {
        parts.push_back(decode_part(aw, spec));
      } catch (const Error& e) {
        throw UsageError(pd + ": " + e.what());
      }
    }
    if (parts.empty()) throw UsageError("no part<i> directories in " + dir);
  }
  DecodedArchitecture arch;
  try {
    const bool residual = parts.front().spec.in_channels == parts.back().spec.out_channels;
    arch = assemble(parts, residual);
  } catch (const Error& e) {
    throw UsageError(std::string("cannot assemble the parts: ") + e.what());
  }
  const std::string path = resolve_path(out, config.paths.arch);
  write_json(path, arch.to_json());
  Json cells = Json::array();
  for (const auto& p : arch.parts) cells.push_back(p.cells.size());
  return {{"architecture", path}, {"cells", cells}, {"adapters", arch.adapters.size()}};
}

Json cmd_train(const RunConfig& config, const std::string& arch_path, const std::string& out) {
  prepare_out(config, out, "train");
  const std::string path = arch_path.empty() ? resolve_path(out, config.paths.arch) : arch_path;
  return by_precision(config, [&](auto t) { return train_impl<decltype(t)>(config, path, out); });
}

Json cmd_eval(const RunConfig& config, const std::string& model_path, const std::string& out) {
  prepare_out(config, out, "eval");
  const std::string path = model_path.empty() ? resolve_path(out, config.paths.model) : model_path;
  return by_precision(config, [&](auto t) { return eval_impl<decltype(t)>(config, path, out); });
}

Json cmd_stats(const RunConfig& config, const std::vector<std::string>& arch_paths, const std::string& run_dir,
               const std::string& out) {
  prepare_out(config, out, "stats");
  std::vector<std::string> paths = arch_paths;
  if (paths.empty()) paths.push_back(resolve_path(out, config.paths.arch));
  std::unique_ptr<LatencyTable> table;
  const std::string lut = resolve_path(out, config.paths.lut);
  if (file_exists(lut)) table = std::make_unique<LatencyTable>(LatencyTable::from_json(read_input(lut, "latency table")));

  std::vector<std::string> names;
  std::vector<std::vector<std::array<double, kNumOps>>> rates;
  std::vector<ComplexityRow> comp;
  for (const auto& p : paths) {
    DecodedArchitecture arch;
    try {
      arch = DecodedArchitecture::from_json(read_input(p, "architecture"));
    } catch (const UsageError&) {
      throw;
    } catch (const Error& e) {
      throw UsageError(p + ": " + e.what());
    }
    names.push_back(fs::path(p).stem().string());
    rates.push_back(operator_rates(arch));
    for (auto& r : complexity(arch, names.back(), table.get())) comp.push_back(r);
  }
  Json written = Json::array();
  auto emit = [&](const char* file, const std::string& text) {
    write_text_atomic(resolve_path(out, file), text);
    written.push_back(file);
  };
  emit("rates.csv", rates_csv(names, rates));
  emit("complexity.csv", complexity_csv(comp));

  if (!run_dir.empty()) {
    std::vector<SearchedPart> searched;
    std::vector<PartSpec> specs;
    for (int i = 0; fs::exists(run_dir + "/part" + std::to_string(i)); ++i) {
      const std::string pd = run_dir + "/part" + std::to_string(i);
      specs.push_back(read_part_spec(pd));
      searched.push_back({read_input(pd + "/archweights.json", "architecture weights"), specs.back()});
    }
    if (searched.empty()) throw UsageError("no part<i> directories in " + run_dir);
    emit("resolution.csv", resolution_csv(resolution_preference(searched)));

    const std::string prior_path = resolve_path(out, config.paths.prior);
    if (file_exists(prior_path)) {
      const auto prior = load_prior<double>(config, out);
      const DatasetSplit split = training_split(config);
      std::vector<std::pair<int, std::vector<FeatureStat>>> feats;
      for (std::size_t i = 0; i < searched.size(); ++i) {
        const std::string pd = run_dir + "/part" + std::to_string(i);
        const Json ckpt = read_input(pd + "/checkpoint.json", "checkpoint");
        Rng rng(0);
        Supernet<double> net(specs[i], rng);
        ArchWeights<double> arch(specs[i], rng);
        try {
          net.weights().load_json(ckpt.at("weights"));
          arch.load_json(searched[i].archweights);
        } catch (const std::exception& e) {
          throw UsageError(pd + ": " + e.what());
        }
        const PartData<double> data = prepare_part_data(*prior, split, static_cast<int>(i));
        feats.emplace_back(static_cast<int>(i), operator_feature_stats(net, arch, data.arch_in.front()));
      }
      emit("features.csv", features_csv(feats));
    }
  }
  return {{"architectures", paths.size()}, {"written", written}};
}

Json cmd_spacesize(const RunConfig& config, const std::string& out) {
  const auto& z = config.spacesize;
  PartSpec spec = config.part;
  const auto geo = part_geometry(spec);
  int widest = 0;
  for (const auto& c : geo) widest = std::max(widest, static_cast<int>(c.history.size()) + c.has[0] + c.has[2]);
  Json r;
  r["rows"] = spec.rows;
  r["cells_per_row"] = spec.cells_per_row;
  r["parts"] = z.parts;
  r["cells_per_part"] = geo.size();
  r["ops"] = z.ops;
  r["widths"] = z.widths;
  r["max_pathways"] = widest;
  r["log10_cell_max"] = cell_space_log10(widest, z.ops, z.widths);
  r["log10_total"] = estimate_space_size(spec, z.parts, z.ops, z.widths);
  if (!out.empty()) {
    prepare_out(config, out, "spacesize");
    write_json(resolve_path(out, "spacesize.json"), r);
  }
  return r;
}

}  // namespace denas
