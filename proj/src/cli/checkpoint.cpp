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

#include "anyexperts/cli/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fmt/format.h>
#include <fstream>
#include <sstream>

namespace anyexperts::cli {

namespace {

class Writer {
 public:
  void bytes(const void* p, std::size_t n) { out_.append(static_cast<const char*>(p), n); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void str(const std::string& s) {
    u64(s.size());
    bytes(s.data(), s.size());
  }
  void matrix_data(const Matrix& m) {
    for (std::size_t i = 0; i < m.size(); ++i) u64(std::bit_cast<std::uint64_t>(m[i]));
  }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(const std::string& in) : in_(in) {}

  std::string_view bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string_view s(in_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{static_cast<unsigned char>(in_[pos_++])} << (8 * i);
    return v;
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t{static_cast<unsigned char>(in_[pos_++])} << (8 * i);
    return v;
  }
  std::string str(const char* what) { return std::string(bytes(u64(what), what)); }
  void matrix_data(Matrix& m, const std::string& what) {
    need(8 * m.size(), what.c_str());
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = std::bit_cast<double>(u64(what.c_str()));
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  void need(std::size_t n, const char* what) const {
    if (in_.size() - pos_ < n) {
      throw CheckpointFormatError(fmt::format("checkpoint truncated while reading {}", what));
    }
  }

  const std::string& in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_checkpoint(const RunConfig& config, const harness::TrainState& state) {
  harness::TrainState copy = state;  // parameters() hands out mutable pointers
  const ParameterList params = copy.model.parameters();
  if (copy.optimizer.m.size() != params.size() || copy.optimizer.v.size() != params.size()) {
    throw InvariantError("optimizer state does not match the parameter list");
  }
  Writer w;
  w.bytes(kCheckpointMagic, sizeof(kCheckpointMagic));
  w.u32(kCheckpointVersion);
  w.str(config.to_text());
  w.u64(copy.seed);
  w.u64(copy.step);
  w.u64(copy.optimizer.step);
  w.u64(copy.rng.key());
  w.u64(copy.rng.counter());
  w.u64(params.size());
  for (std::size_t k = 0; k < params.size(); ++k) {
    const Parameter& p = *params[k];
    w.str(p.name);
    w.u64(p.value.rows());
    w.u64(p.value.cols());
    w.matrix_data(p.value);
    w.matrix_data(copy.optimizer.m[k]);
    w.matrix_data(copy.optimizer.v[k]);
  }
  return w.take();
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  Reader r(bytes);
  if (r.bytes(sizeof(kCheckpointMagic), "magic header") !=
      std::string_view(kCheckpointMagic, sizeof(kCheckpointMagic))) {
    throw CheckpointFormatError("not a checkpoint: bad magic header");
  }
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion) {
    throw CheckpointVersionError(
        fmt::format("checkpoint version {} is not supported (expected {})", version, kCheckpointVersion));
  }

  Checkpoint ck;
  ck.config = parse_run_config(r.str("config"));
  const std::uint64_t seed = r.u64("seed");
  ck.state = harness::TrainState::initialize(ck.config.model, seed);
  ck.state.step = r.u64("step");
  ck.state.optimizer.step = r.u64("optimizer step");
  const std::uint64_t key = r.u64("rng key");
  const std::uint64_t counter = r.u64("rng counter");
  ck.state.rng = Rng(key, counter);

  const ParameterList params = ck.state.model.parameters();
  const std::uint64_t count = r.u64("parameter count");
  if (count != params.size()) {
    throw CheckpointShapeError(fmt::format("checkpoint holds {} parameters but the config builds {}",
                                           count, params.size()));
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter& p = *params[k];
    const std::string name = r.str("parameter name");
    if (name != p.name) {
      throw CheckpointShapeError(
          fmt::format("parameter {} is '{}' in the checkpoint but '{}' in the model", k, name, p.name));
    }
    const std::uint64_t rows = r.u64("rows");
    const std::uint64_t cols = r.u64("cols");
    if (rows != p.value.rows() || cols != p.value.cols()) {
      throw CheckpointShapeError(fmt::format("parameter '{}' is {} in the checkpoint but {} in the model",
                                             name, shape_string(rows, cols), p.value.shape_string()));
    }
    r.matrix_data(p.value, name);
    r.matrix_data(ck.state.optimizer.m[k], name + " first moment");
    r.matrix_data(ck.state.optimizer.v[k], name + " second moment");
  }
  if (!r.done()) throw CheckpointFormatError("trailing bytes after the last parameter");
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const RunConfig& config,
                     const harness::TrainState& state) {
  const std::string bytes = serialize_checkpoint(config, state);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError(fmt::format("cannot write checkpoint '{}'", path.string()));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(fmt::format("cannot read checkpoint '{}'", path.string()));
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return deserialize_checkpoint(buf.str());
  } catch (const ConfigError& e) {
    throw CheckpointFormatError(fmt::format("checkpoint config is invalid: {}", e.what()));
  }
}

}  // namespace anyexperts::cli
