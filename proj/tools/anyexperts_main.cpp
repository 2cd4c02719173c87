// Copyright 2026 The AnyExperts Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// anyexperts train | sweep | trace | check-grad

#include <cstdint>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "anyexperts/cli/commands.hpp"

int main(int argc, char** argv) {
  namespace cli = anyexperts::cli;
  CLI::App app{"AnyExperts desk harness"};
  app.require_subcommand(1);

  std::string config, out, checkpoint, scales = "1.0";
  std::uint64_t seed = 0;

  CLI::App* train = app.add_subcommand("train", "train a model and write its artifacts");
  train->add_option("--config", config, "flat key = value config file")->required();
  train->add_option("--out", out, "output directory")->required();
  CLI::Option* seed_opt = train->add_option("--seed", seed, "overrides the config seed");

  CLI::App* sweep = app.add_subcommand("sweep", "evaluate budget scales against top-k baselines");
  sweep->add_option("--checkpoint", checkpoint)->required();
  sweep->add_option("--scales", scales, "comma-separated budget scales");
  sweep->add_option("--out", out, "output directory")->required();

  CLI::App* trace = app.add_subcommand("trace", "export per-token importance");
  trace->add_option("--checkpoint", checkpoint)->required();
  trace->add_option("--seed", seed, "data seed")->required();
  trace->add_option("--out", out, "output JSON-lines file")->required();

  CLI::App* grad = app.add_subcommand("check-grad", "run the gradient suites");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return cli::kExitUsage;
  }

  if (*train) {
    return cli::cmd_train(config, out, *seed_opt ? std::optional<std::uint64_t>(seed) : std::nullopt,
                          std::cerr);
  }
  if (*sweep) return cli::cmd_sweep(checkpoint, scales, out, std::cerr);
  if (*trace) return cli::cmd_trace(checkpoint, seed, out, std::cerr);
  if (*grad) return cli::cmd_check_grad(std::cout, std::cerr);
  return cli::kExitUsage;
}
