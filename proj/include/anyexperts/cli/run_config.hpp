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

#ifndef ANYEXPERTS_CLI_RUN_CONFIG_HPP_
#define ANYEXPERTS_CLI_RUN_CONFIG_HPP_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "anyexperts/errors.hpp"
#include "anyexperts/harness/model.hpp"
#include "anyexperts/harness/synthetic.hpp"

namespace anyexperts::cli {

// A malformed line or value. line() is 1-based; 0 when the problem is not
// tied to a line (an override, say).
class ConfigParseError : public ConfigError {
 public:
  ConfigParseError(std::size_t line, std::string key, const std::string& what);
  std::size_t line() const { return line_; }
  const std::string& key() const { return key_; }

 private:
  std::size_t line_;
  std::string key_;
};

class MissingKeyError : public ConfigError {
 public:
  explicit MissingKeyError(std::string key);
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

// Everything a run needs. Router and loss defaults follow the reference configuration; the
// remaining knobs size the synthetic task.
struct RunConfig {
  RunConfig();

  std::uint64_t seed = 0;  // required
  std::size_t steps = 0;   // required
  harness::ModelConfig model;
  std::size_t n_background = 4;
  std::size_t seq_len = 32;
  std::size_t n_sequences = 256;
  std::size_t eval_sequences = 64;
  std::size_t batch_sequences = 16;
  std::size_t eval_interval = 50;
  double lr = 0.003;
  double redundancy = 0.5;
  LossWeights weights;
  std::vector<std::size_t> baseline_ks{4, 6, 8, 10};

  RouterConfig& router() { return model.layer.router; }
  const RouterConfig& router() const { return model.layer.router; }

  // Throws ConfigError naming the offending key.
  void validate() const;

  harness::StreamSpec stream_spec() const;
  harness::TrainOptions train_options() const;
  // Training streams come from `seed`, evaluation streams from `seed + 1`.
  std::vector<harness::SyntheticStream> train_data() const;
  std::vector<harness::SyntheticStream> eval_data() const;

  // Every key in a fixed order; parse(to_text()) reproduces the config exactly.
  std::string to_text() const;
};

// Keys that must appear in the document or in the overrides.
const std::vector<std::string>& required_keys();
// All accepted keys, in canonical order.
std::vector<std::string> known_keys();

// Flat `key = value` lines; '#' starts a comment. Unknown or repeated keys,
// malformed values and missing required keys are rejected. Overrides are
// applied after the document and count as present.
RunConfig parse_run_config(std::string_view text,
                           const std::map<std::string, std::string>& overrides = {});
RunConfig load_run_config(const std::filesystem::path& path,
                          const std::map<std::string, std::string>& overrides = {});

}  // namespace anyexperts::cli

#endif  // ANYEXPERTS_CLI_RUN_CONFIG_HPP_
