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

#ifndef ANYEXPERTS_HARNESS_MODEL_HPP_
#define ANYEXPERTS_HARNESS_MODEL_HPP_

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "anyexperts/harness/synthetic.hpp"
#include "anyexperts/moe_layer.hpp"
#include "anyexperts/rng.hpp"

namespace anyexperts::harness {

struct ModelConfig {
  std::size_t vocab = 32;
  bool pre_norm = true;
  LayerConfig layer;
};

// embedding -> AnyExperts layer -> linear head over the vocabulary.
class ToyModel {
 public:
  struct Vars {
    Var logits;
    AnyExpertsLayer::Vars layer;
  };

  ToyModel() = default;
  ToyModel(const ModelConfig& cfg, Rng& rng);

  const ModelConfig& config() const { return cfg_; }

  Vars forward(Tape& tape, std::span<const std::size_t> tokens, const RoutingPolicy& policy,
               const ForwardOptions& options = {}) const;

  // embedding, layer parameters, head.
  ParameterList parameters();

  Parameter embedding;  // vocab × d
  AnyExpertsLayer layer;
  Parameter head_weight;  // d × vocab
  Parameter head_bias;    // 1 × vocab

 private:
  ModelConfig cfg_;
};

struct AdamConfig {
  double lr = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// First and second moments, one pair per parameter in ParameterList order.
struct AdamState {
  std::vector<Matrix> m;
  std::vector<Matrix> v;
  std::uint64_t step = 0;

  static AdamState zeros_like(const ParameterList& params);
};

void adam_update(const ParameterList& params, AdamState& state, const AdamConfig& cfg);

struct TrainState {
  std::uint64_t seed = 0;
  ModelConfig config;
  ToyModel model;
  AdamState optimizer;
  std::uint64_t step = 0;
  Rng rng;

  static TrainState initialize(const ModelConfig& cfg, std::uint64_t seed);
};

// A flat batch: every position of every sequence.
struct TokenBatch {
  std::vector<std::size_t> tokens;
  std::vector<std::size_t> targets;
  std::vector<Modality> modality;
  std::vector<bool> informative;
};
TokenBatch flatten(std::span<const SyntheticStream> sequences);

struct EvalMetrics {
  double loss = 0.0;      // mean LM cross-entropy
  double accuracy = 0.0;  // argmax == target over all positions
  LoadStats stats;
};

EvalMetrics evaluate(const ToyModel& model, std::span<const SyntheticStream> data,
                     const RoutingPolicy& policy);

struct LossPoint {
  std::uint64_t step = 0;
  LossBundle loss;
};

struct EvalPoint {
  std::uint64_t step = 0;
  EvalMetrics metrics;
};

struct TrainOptions {
  std::size_t steps = 200;
  AdamConfig adam;
  LossWeights weights;
  // Sequences per step, taken round-robin from the training set; 0 = all.
  std::size_t batch_sequences = 0;
  // Evaluate on `eval_data` every this many steps (and after the last); 0 = never.
  std::size_t eval_interval = 0;
};

struct TrainResult {
  std::vector<LossPoint> curve;
  std::vector<EvalPoint> evals;
};

// Runs `options.steps` optimisation steps under `policy`. Throws NumericError
// naming the step and the loss components if the loss stops being finite.
TrainResult train(TrainState& state, std::span<const SyntheticStream> data,
                  const RoutingPolicy& policy, const TrainOptions& options,
                  std::span<const SyntheticStream> eval_data = {});

// The loss of one step, built on `tape`, for gradient checks.
Var step_loss(Tape& tape, const ToyModel& model, const TokenBatch& batch,
              const RoutingPolicy& policy, const LossWeights& weights,
              const ForwardOptions& options = {});

}  // namespace anyexperts::harness

#endif  // ANYEXPERTS_HARNESS_MODEL_HPP_
