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

#include "anyexperts/cli/run_config.hpp"

#include <charconv>
#include <cmath>
#include <fmt/format.h>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "anyexperts/harness/analysis.hpp"

namespace anyexperts::cli {

ConfigParseError::ConfigParseError(std::size_t line, std::string key, const std::string& what)
    : ConfigError(line > 0 ? fmt::format("line {}: {}", line, what) : what),
      line_(line),
      key_(std::move(key)) {}

MissingKeyError::MissingKeyError(std::string key)
    : ConfigError(fmt::format("missing required key '{}'", key)), key_(std::move(key)) {}

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

// Value parsers throw std::invalid_argument; the caller attaches line and key.
std::uint64_t to_u64(std::string_view v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty()) {
    throw std::invalid_argument(fmt::format("'{}' is not a non-negative integer", v));
  }
  return out;
}

double to_double(std::string_view v) {
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty() || !std::isfinite(out)) {
    throw std::invalid_argument(fmt::format("'{}' is not a finite number", v));
  }
  return out;
}

bool to_bool(std::string_view v) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw std::invalid_argument(fmt::format("'{}' is not true or false", v));
}

std::vector<std::size_t> to_list(std::string_view v) {
  std::vector<std::size_t> out;
  if (v.empty()) return out;
  std::size_t start = 0;
  while (true) {
    const auto comma = v.find(',', start);
    out.push_back(to_u64(trim(v.substr(start, comma - start))));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

std::string from_list(const std::vector<std::size_t>& v) { return fmt::format("{}", fmt::join(v, ",")); }

struct Key {
  std::string name;
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define AX_SIZE_KEY(key, field)                                                   \
  Key {                                                                           \
    key, [](RunConfig& c, std::string_view v) { c.field = to_u64(v); },           \
        [](const RunConfig& c) { return std::to_string(c.field); }                \
  }
#define AX_DOUBLE_KEY(key, field)                                                 \
  Key {                                                                           \
    key, [](RunConfig& c, std::string_view v) { c.field = to_double(v); },        \
        [](const RunConfig& c) { return harness::format_double(c.field); }        \
  }

const std::vector<Key>& keys() {
  static const std::vector<Key> table{
      AX_SIZE_KEY("seed", seed),
      AX_SIZE_KEY("steps", steps),
      AX_SIZE_KEY("k_min", model.layer.router.k_min),
      AX_SIZE_KEY("k_max", model.layer.router.k_max),
      AX_SIZE_KEY("e_real", model.layer.router.e_real),
      AX_SIZE_KEY("e_virtual", model.layer.router.e_virtual),
      AX_DOUBLE_KEY("rho_max", model.layer.router.rho_max),
      AX_DOUBLE_KEY("alpha", model.layer.router.alpha),
      AX_DOUBLE_KEY("lambda", model.layer.router.lambda),
      AX_DOUBLE_KEY("eps", model.layer.router.eps),
      AX_DOUBLE_KEY("budget_scale", model.layer.router.budget_scale),
      AX_DOUBLE_KEY("lambda_tir", weights.tir),
      AX_DOUBLE_KEY("lambda_bal", weights.balance),
      AX_SIZE_KEY("d", model.layer.dim),
      AX_SIZE_KEY("d_ff", model.layer.d_ff),
      Key{"estimator",
          [](RunConfig& c, std::string_view v) { c.model.layer.estimator = parse_variant(v); },
          [](const RunConfig& c) { return std::string(variant_name(c.model.layer.estimator)); }},
      Key{"pre_norm", [](RunConfig& c, std::string_view v) { c.model.pre_norm = to_bool(v); },
          [](const RunConfig& c) { return std::string(c.model.pre_norm ? "true" : "false"); }},
      AX_SIZE_KEY("vocab", model.vocab),
      AX_SIZE_KEY("n_background", n_background),
      AX_SIZE_KEY("seq_len", seq_len),
      AX_SIZE_KEY("n_sequences", n_sequences),
      AX_SIZE_KEY("eval_sequences", eval_sequences),
      AX_SIZE_KEY("batch_sequences", batch_sequences),
      AX_SIZE_KEY("eval_interval", eval_interval),
      AX_DOUBLE_KEY("lr", lr),
      AX_DOUBLE_KEY("redundancy", redundancy),
      Key{"baseline_ks", [](RunConfig& c, std::string_view v) { c.baseline_ks = to_list(v); },
          [](const RunConfig& c) { return from_list(c.baseline_ks); }},
  };
  return table;
}

#undef AX_SIZE_KEY
#undef AX_DOUBLE_KEY

const Key* find_key(std::string_view name) {
  for (const Key& k : keys()) {
    if (k.name == name) return &k;
  }
  return nullptr;
}

void apply(RunConfig& cfg, const Key& key, std::string_view value, std::size_t line) {
  try {
    key.set(cfg, value);
  } catch (const ConfigError& e) {
    throw ConfigParseError(line, key.name, fmt::format("key '{}': {}", key.name, e.what()));
  } catch (const std::invalid_argument& e) {
    throw ConfigParseError(line, key.name, fmt::format("key '{}': {}", key.name, e.what()));
  }
}

}  // namespace

RunConfig::RunConfig() { model.vocab = 512; }

const std::vector<std::string>& required_keys() {
  static const std::vector<std::string> req{"seed", "steps"};
  return req;
}

std::vector<std::string> known_keys() {
  std::vector<std::string> out;
  for (const Key& k : keys()) out.push_back(k.name);
  return out;
}

void RunConfig::validate() const {
  try {
    router().validate();
  } catch (const ConfigError& e) {
    throw ConfigError(fmt::format("router: {}", e.what()));
  }
  if (steps < 1) throw ConfigError("steps must be at least 1");
  if (!(lr >= 0.0)) throw ConfigError("lr must be non-negative");
  if (model.layer.dim == 0 || model.layer.d_ff == 0) throw ConfigError("d and d_ff must be positive");
  if (weights.tir < 0.0 || weights.balance < 0.0) {
    throw ConfigError("lambda_tir and lambda_bal must be non-negative");
  }
  if (!(redundancy >= 0.0 && redundancy < 1.0)) throw ConfigError("redundancy must lie in [0, 1)");
  if (n_sequences == 0 || eval_sequences == 0) {
    throw ConfigError("n_sequences and eval_sequences must be positive");
  }
  for (std::size_t k : baseline_ks) {
    if (k < 1 || k > router().e_real) {
      throw ConfigError(fmt::format("baseline k={} outside [1, e_real={}]", k, router().e_real));
    }
  }
  // Surfaces vocabulary and sequence-length problems before any training.
  harness::generate(seed, 1, seq_len, redundancy, stream_spec());
}

harness::StreamSpec RunConfig::stream_spec() const { return {model.vocab, n_background}; }

harness::TrainOptions RunConfig::train_options() const {
  harness::TrainOptions o;
  o.steps = steps;
  o.adam.lr = lr;
  o.weights = weights;
  o.batch_sequences = batch_sequences;
  o.eval_interval = eval_interval;
  return o;
}

std::vector<harness::SyntheticStream> RunConfig::train_data() const {
  return harness::generate(seed, n_sequences, seq_len, redundancy, stream_spec());
}

std::vector<harness::SyntheticStream> RunConfig::eval_data() const {
  return harness::generate(seed + 1, eval_sequences, seq_len, redundancy, stream_spec());
}

std::string RunConfig::to_text() const {
  std::string out;
  for (const Key& k : keys()) out += fmt::format("{} = {}\n", k.name, k.get(*this));
  return out;
}

RunConfig parse_run_config(std::string_view text,
                           const std::map<std::string, std::string>& overrides) {
  RunConfig cfg;
  std::set<std::string> seen;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto newline = text.find('\n', start);
    std::string_view line = text.substr(start, newline == std::string_view::npos
                                                   ? std::string_view::npos
                                                   : newline - start);
    ++line_no;
    start = newline == std::string_view::npos ? text.size() + 1 : newline + 1;

    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigParseError(line_no, "", fmt::format("expected 'key = value', got '{}'", line));
    }
    const std::string name(trim(line.substr(0, eq)));
    const std::string_view value = trim(line.substr(eq + 1));
    const Key* key = find_key(name);
    if (key == nullptr) throw ConfigParseError(line_no, name, fmt::format("unknown key '{}'", name));
    if (!seen.insert(name).second) {
      throw ConfigParseError(line_no, name, fmt::format("key '{}' given twice", name));
    }
    apply(cfg, *key, value, line_no);
  }
  for (const auto& [name, value] : overrides) {
    const Key* key = find_key(name);
    if (key == nullptr) throw ConfigParseError(0, name, fmt::format("unknown key '{}'", name));
    apply(cfg, *key, trim(value), 0);
    seen.insert(name);
  }
  for (const std::string& req : required_keys()) {
    if (!seen.contains(req)) throw MissingKeyError(req);
  }
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path,
                          const std::map<std::string, std::string>& overrides) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(fmt::format("cannot read config '{}'", path.string()));
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_run_config(buf.str(), overrides);
}

}  // namespace anyexperts::cli
