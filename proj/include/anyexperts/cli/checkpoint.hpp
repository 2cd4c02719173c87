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

#ifndef ANYEXPERTS_CLI_CHECKPOINT_HPP_
#define ANYEXPERTS_CLI_CHECKPOINT_HPP_

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

#include "anyexperts/cli/run_config.hpp"
#include "anyexperts/harness/model.hpp"

namespace anyexperts::cli {

// Layout (little-endian throughout):
//   magic "AXCKPT\r\n", u32 version,
//   str config, u64 seed, u64 step, u64 adam_step, u64 rng_key, u64 rng_counter,
//   u64 parameter count, then per parameter: str name, u64 rows, u64 cols,
//   f64 value[rows*cols], f64 m[rows*cols], f64 v[rows*cols].
// str is a u64 byte length followed by the bytes.
inline constexpr char kCheckpointMagic[8] = {'A', 'X', 'C', 'K', 'P', 'T', '\r', '\n'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad magic, truncation, trailing bytes.
class CheckpointFormatError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

class CheckpointVersionError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

// A stored parameter whose name or shape disagrees with the model its config builds.
class CheckpointShapeError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

struct Checkpoint {
  RunConfig config;
  harness::TrainState state;
};

std::string serialize_checkpoint(const RunConfig& config, const harness::TrainState& state);
Checkpoint deserialize_checkpoint(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, const RunConfig& config,
                     const harness::TrainState& state);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace anyexperts::cli

#endif  // ANYEXPERTS_CLI_CHECKPOINT_HPP_
