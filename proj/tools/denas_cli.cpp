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

// denas command-line front end.

#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "denas/pipeline.hpp"

namespace {

struct Common {
  std::string config;
  std::string preset = "default";
  std::string out = ".";
  long long seed = -1;
  bool force = false;
  bool parallel = false;
  int reps = 0;
  bool random = false;
  std::string run;
  std::vector<std::string> args;
};

// Positional arguments of the form key=value are overrides; the rest are
// inputs of the command.
void split_args(const std::vector<std::string>& args, std::vector<std::string>& inputs,
                std::vector<std::string>& overrides) {
  for (const auto& a : args) (a.find('=') != std::string::npos ? overrides : inputs).push_back(a);
}

int run(const std::string& command, const Common& c) {
  std::vector<std::string> inputs, overrides;
  split_args(c.args, inputs, overrides);
  if (c.seed >= 0) overrides.push_back("seed=" + std::to_string(c.seed));
  if (c.reps > 0) overrides.push_back("lut.reps=" + std::to_string(c.reps));
  std::vector<std::string> log;
  const denas::RunConfig config = denas::load_config(c.config, overrides, &log, denas::preset_config(c.preset));
  for (const auto& l : log) std::clog << "override " << l << '\n';

  auto at_most_one = [&] {
    if (inputs.size() > 1) throw denas::UsageError(command + " takes at most one input path");
    return inputs.empty() ? std::string() : inputs.front();
  };
  auto no_inputs = [&] {
    if (!inputs.empty()) throw denas::UsageError(command + " takes no input paths");
  };

  nlohmann::ordered_json r;
  if (command == "lut") {
    no_inputs();
    r = denas::cmd_lut(config, c.out, c.force);
  } else if (command == "prior") {
    no_inputs();
    r = denas::cmd_prior(config, c.out);
  } else if (command == "search") {
    no_inputs();
    r = denas::cmd_search(config, c.out, c.parallel, c.force);
  } else if (command == "decode") {
    r = denas::cmd_decode(config, at_most_one(), c.out, c.random);
  } else if (command == "train") {
    r = denas::cmd_train(config, at_most_one(), c.out);
  } else if (command == "eval") {
    r = denas::cmd_eval(config, at_most_one(), c.out);
  } else if (command == "stats") {
    r = denas::cmd_stats(config, inputs, c.run, c.out);
  } else if (command == "spacesize") {
    no_inputs();
    r = denas::cmd_spacesize(config, c.out);
  }
  std::cout << r.dump(2) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Differentiable architecture search for image denoising"};
  app.require_subcommand(1);
  Common c;

  const std::vector<std::pair<std::string, std::string>> commands = {
      {"lut", "Time every operator configuration into a latency table"},
      {"prior", "Train the three-part prior model"},
      {"search", "Search the architecture of every part"},
      {"decode", "Decode a search run (or --random) into an architecture"},
      {"train", "Train a decoded architecture from scratch and evaluate it"},
      {"eval", "Evaluate a trained model"},
      {"stats", "Emit operator, resolution, complexity and feature statistics"},
      {"spacesize", "Report the log10 size of the search space"},
  };
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", c.config, "JSON configuration file");
    sub->add_option("--preset", c.preset, "Base configuration: default, desk or paper");
    sub->add_option("--seed", c.seed, "Run seed")->check(CLI::NonNegativeNumber);
    sub->add_option("--out", c.out, "Output directory");
    sub->add_flag("--force", c.force, "Overwrite (lut) or restart (search)");
    sub->add_flag("--parallel", c.parallel, "Search the parts concurrently");
    sub->add_option("args", c.args, "Inputs and key=value overrides");
    if (name == "lut") sub->add_option("--reps", c.reps, "Timed repetitions")->check(CLI::PositiveNumber);
    if (name == "decode") sub->add_flag("--random", c.random, "Draw a random architecture");
    if (name == "stats") sub->add_option("--run", c.run, "Search run directory");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    return run(app.get_subcommands().front()->get_name(), c);
  } catch (const denas::UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 1;
  }
}
