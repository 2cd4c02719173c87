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

#ifndef ANYEXPERTS_CLI_COMMANDS_HPP_
#define ANYEXPERTS_CLI_COMMANDS_HPP_

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string_view>
#include <vector>

namespace anyexperts::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;  // numeric failure, unreadable checkpoint, I/O
inline constexpr int kExitUsage = 2;    // bad flags or config

// "0.6,0.7,1.0" -> values; throws ConfigError on anything that is not a
// positive number.
std::vector<double> parse_scales(std::string_view csv);

// Each command reports diagnostics on `err` and returns an exit code.

// Writes checkpoint.bin, loss_curve.csv, eval.csv and load_stats.json to out_dir.
int cmd_train(const std::filesystem::path& config, const std::filesystem::path& out_dir,
              std::optional<std::uint64_t> seed, std::ostream& err);

// Writes sweep.csv to out_dir.
int cmd_sweep(const std::filesystem::path& checkpoint, std::string_view scales,
              const std::filesystem::path& out_dir, std::ostream& err);

// Writes the importance trace of freshly generated evaluation streams.
int cmd_trace(const std::filesystem::path& checkpoint, std::uint64_t data_seed,
              const std::filesystem::path& out_path, std::ostream& err);

// One line per gradient suite; nonzero exit if any coordinate fails.
int cmd_check_grad(std::ostream& out, std::ostream& err);

}  // namespace anyexperts::cli

#endif  // ANYEXPERTS_CLI_COMMANDS_HPP_
