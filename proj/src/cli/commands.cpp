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

#include "anyexperts/cli/commands.hpp"

#include <charconv>
#include <cmath>
#include <fmt/format.h>
#include <fmt/ostream.h>
#include <fstream>
#include <functional>
#include <ostream>
#include <string>

#include "anyexperts/cli/checkpoint.hpp"
#include "anyexperts/cli/run_config.hpp"
#include "anyexperts/errors.hpp"
#include "anyexperts/harness/analysis.hpp"
#include "anyexperts/harness/grad_suites.hpp"

namespace anyexperts::cli {

namespace fs = std::filesystem;

namespace {

// Maps the error taxonomy onto exit codes.
int guarded(std::ostream& err, const std::function<int()>& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    fmt::print(err, "config error: {}\n", e.what());
    return kExitUsage;
  } catch (const CheckpointError& e) {
    fmt::print(err, "checkpoint error: {}\n", e.what());
    return kExitRuntime;
  } catch (const NumericError& e) {
    fmt::print(err, "numeric error: {}\n", e.what());
    return kExitRuntime;
  } catch (const std::exception& e) {
    fmt::print(err, "error: {}\n", e.what());
    return kExitRuntime;
  }
}

std::ofstream open_output(const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error(fmt::format("cannot write '{}'", path.string()));
  return out;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::runtime_error(fmt::format("cannot create '{}': {}", dir.string(), ec.message()));
}

}  // namespace

std::vector<double> parse_scales(std::string_view csv) {
  std::vector<double> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = csv.find(',', start);
    std::string_view item = csv.substr(start, comma == std::string_view::npos ? csv.npos : comma - start);
    while (!item.empty() && item.front() == ' ') item.remove_prefix(1);
    while (!item.empty() && item.back() == ' ') item.remove_suffix(1);
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    if (item.empty() || ec != std::errc() || ptr != item.data() + item.size() || !std::isfinite(v) ||
        v <= 0.0) {
      throw ConfigError(fmt::format("scale '{}' is not a positive number", item));
    }
    out.push_back(v);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

int cmd_train(const fs::path& config, const fs::path& out_dir, std::optional<std::uint64_t> seed,
              std::ostream& err) {
  return guarded(err, [&] {
    std::map<std::string, std::string> overrides;
    if (seed) overrides["seed"] = std::to_string(*seed);
    const RunConfig cfg = load_run_config(config, overrides);
    ensure_dir(out_dir);

    harness::TrainState state = harness::TrainState::initialize(cfg.model, cfg.seed);
    const auto train_data = cfg.train_data();
    const auto eval_data = cfg.eval_data();
    harness::TrainOptions opts = cfg.train_options();
    if (opts.eval_interval == 0) opts.eval_interval = opts.steps;
    const harness::TrainResult result = harness::train(state, train_data, cfg.router(), opts, eval_data);

    save_checkpoint(out_dir / "checkpoint.bin", cfg, state);
    {
      std::ofstream out = open_output(out_dir / "loss_curve.csv");
      harness::write_loss_curve_csv(out, result.curve);
    }
    {
      std::ofstream out = open_output(out_dir / "eval.csv");
      harness::write_eval_csv(out, result.evals);
    }
    {
      nlohmann::json stats = nlohmann::json::array();
      for (const harness::EvalPoint& e : result.evals) {
        stats.push_back({{"step", e.step}, {"stats", e.metrics.stats.to_json()}});
      }
      std::ofstream out = open_output(out_dir / "load_stats.json");
      out << stats.dump(2) << '\n';
    }
    return kExitOk;
  });
}

int cmd_sweep(const fs::path& checkpoint, std::string_view scales, const fs::path& out_dir,
              std::ostream& err) {
  return guarded(err, [&] {
    const std::vector<double> values = parse_scales(scales);
    const Checkpoint ck = load_checkpoint(checkpoint);
    ensure_dir(out_dir);
    harness::BaselineTraining baselines;
    baselines.ks = ck.config.baseline_ks;
    baselines.options = ck.config.train_options();
    baselines.options.eval_interval = 0;
    const harness::SweepReport report = harness::budget_sweep(
        ck.state, ck.config.train_data(), ck.config.eval_data(), values, baselines);
    std::ofstream out = open_output(out_dir / "sweep.csv");
    harness::write_sweep_csv(out, report);
    return kExitOk;
  });
}

int cmd_trace(const fs::path& checkpoint, std::uint64_t data_seed, const fs::path& out_path,
              std::ostream& err) {
  return guarded(err, [&] {
    const Checkpoint ck = load_checkpoint(checkpoint);
    const RunConfig& cfg = ck.config;
    const auto streams =
        harness::generate(data_seed, cfg.eval_sequences, cfg.seq_len, cfg.redundancy, cfg.stream_spec());
    const harness::ImportanceTrace trace =
        harness::export_importance_trace(ck.state.model, streams, cfg.router());
    if (out_path.has_parent_path()) ensure_dir(out_path.parent_path());
    std::ofstream out = open_output(out_path);
    harness::write_trace_jsonl(out, trace);
    return kExitOk;
  });
}

int cmd_check_grad(std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    bool all = true;
    for (const harness::GradSuite& s : harness::run_gradient_suites()) {
      const GradCheckReport& r = s.report;
      fmt::print(out, "{} {:<22} coords={} failures={} max_rel={:.3e} worst={}\n",
                 r.passed ? "PASS" : "FAIL", s.name, r.coordinates, r.failures, r.max_rel_error,
                 r.worst_coordinate);
      all = all && r.passed;
    }
    return all ? kExitOk : kExitRuntime;
  });
}

}  // namespace anyexperts::cli
