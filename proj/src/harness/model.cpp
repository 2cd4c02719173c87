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

#include "anyexperts/harness/model.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>

#include "anyexperts/errors.hpp"
#include "anyexperts/ops.hpp"

namespace anyexperts::harness {

namespace {
constexpr double kPreNormEps = 1e-5;
}  // namespace

ToyModel::ToyModel(const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
  const std::size_t d = cfg.layer.dim;
  if (cfg.vocab == 0) throw ConfigError("vocab must be positive");
  Rng emb_rng = rng.split(10), layer_rng = rng.split(11), head_rng = rng.split(12);
  Matrix emb(cfg.vocab, d);
  for (std::size_t i = 0; i < emb.size(); ++i) emb[i] = emb_rng.normal();
  embedding = Parameter("embedding", std::move(emb));
  layer = AnyExpertsLayer(cfg.layer, layer_rng);
  Matrix head(d, cfg.vocab);
  const double bound = 1.0 / std::sqrt(static_cast<double>(d));
  for (std::size_t i = 0; i < head.size(); ++i) head[i] = head_rng.uniform(-bound, bound);
  head_weight = Parameter("head.weight", std::move(head));
  head_bias = Parameter("head.bias", Matrix(1, cfg.vocab));
}

ToyModel::Vars ToyModel::forward(Tape& tape, std::span<const std::size_t> tokens,
                                 const RoutingPolicy& policy, const ForwardOptions& options) const {
  for (std::size_t t : tokens) {
    if (t >= cfg_.vocab) throw ContractError(fmt::format("token id {} outside vocabulary", t));
  }
  Vars v;
  Var h = ops::gather_rows(tape.parameter(embedding),
                           std::vector<std::size_t>(tokens.begin(), tokens.end()));
  if (cfg_.pre_norm) {
    const std::size_t d = cfg_.layer.dim;
    h = ops::layer_norm_rows(h, tape.constant(Matrix(1, d, 1.0)), tape.constant(Matrix(1, d)),
                             kPreNormEps);
  }
  v.layer = layer.forward(tape, h, policy, options);
  v.logits = ops::add_row(ops::matmul(v.layer.output, tape.parameter(head_weight)),
                          tape.parameter(head_bias));
  return v;
}

ParameterList ToyModel::parameters() {
  ParameterList out{&embedding};
  for (Parameter* p : layer.parameters()) out.push_back(p);
  out.push_back(&head_weight);
  out.push_back(&head_bias);
  return out;
}

AdamState AdamState::zeros_like(const ParameterList& params) {
  AdamState s;
  for (const Parameter* p : params) {
    s.m.emplace_back(p->value.rows(), p->value.cols());
    s.v.emplace_back(p->value.rows(), p->value.cols());
  }
  return s;
}

void adam_update(const ParameterList& params, AdamState& state, const AdamConfig& cfg) {
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw InvariantError("optimizer state does not match the parameter list");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(cfg.beta1, t);
  const double correction2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter& p = *params[k];
    Matrix& m = state.m[k];
    Matrix& v = state.v[k];
    if (m.size() != p.value.size() || v.size() != p.value.size()) {
      throw InvariantError(fmt::format("optimizer moments for '{}' have the wrong shape", p.name));
    }
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      p.value[i] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
    }
  }
}

TrainState TrainState::initialize(const ModelConfig& cfg, std::uint64_t seed) {
  TrainState s;
  s.seed = seed;
  s.config = cfg;
  Rng root(seed);
  Rng init = root.split(0);
  s.model = ToyModel(cfg, init);
  s.optimizer = AdamState::zeros_like(s.model.parameters());
  s.rng = root.split(1);
  return s;
}

TokenBatch flatten(std::span<const SyntheticStream> sequences) {
  TokenBatch b;
  for (const SyntheticStream& s : sequences) {
    b.tokens.insert(b.tokens.end(), s.tokens.begin(), s.tokens.end());
    b.targets.insert(b.targets.end(), s.targets.begin(), s.targets.end());
    b.modality.insert(b.modality.end(), s.modality.begin(), s.modality.end());
    b.informative.insert(b.informative.end(), s.informative.begin(), s.informative.end());
  }
  return b;
}

EvalMetrics evaluate(const ToyModel& model, std::span<const SyntheticStream> data,
                     const RoutingPolicy& policy) {
  const TokenBatch batch = flatten(data);
  if (batch.tokens.empty()) throw ContractError("evaluate on an empty dataset");
  Tape tape;
  ToyModel::Vars v = model.forward(tape, batch.tokens, policy);
  EvalMetrics m;
  m.loss = lm_loss(v.logits, batch.targets).scalar();
  const Matrix& logits = v.logits.value();
  std::size_t correct = 0;
  for (std::size_t i = 0; i < batch.tokens.size(); ++i) {
    const auto row = logits.row(i);
    const auto best = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
    if (best == batch.targets[i]) ++correct;
  }
  m.accuracy = static_cast<double>(correct) / static_cast<double>(batch.tokens.size());
  m.stats = std::move(v.layer.stats);
  return m;
}

Var step_loss(Tape& tape, const ToyModel& model, const TokenBatch& batch,
              const RoutingPolicy& policy, const LossWeights& weights,
              const ForwardOptions& options) {
  ToyModel::Vars v = model.forward(tape, batch.tokens, policy, options);
  Var lm = lm_loss(v.logits, batch.targets);
  return total_loss(lm, v.layer.tir, v.layer.balance, weights);
}

namespace {

std::vector<SyntheticStream> batch_for_step(std::span<const SyntheticStream> data,
                                            std::uint64_t step, std::size_t batch_sequences) {
  if (batch_sequences == 0 || batch_sequences >= data.size()) {
    return {data.begin(), data.end()};
  }
  std::vector<SyntheticStream> out;
  out.reserve(batch_sequences);
  const std::size_t start = static_cast<std::size_t>(step * batch_sequences % data.size());
  for (std::size_t k = 0; k < batch_sequences; ++k) out.push_back(data[(start + k) % data.size()]);
  return out;
}

}  // namespace

TrainResult train(TrainState& state, std::span<const SyntheticStream> data,
                  const RoutingPolicy& policy, const TrainOptions& options,
                  std::span<const SyntheticStream> eval_data) {
  if (options.steps < 1) throw ContractError("train needs at least one step");
  if (!(options.adam.lr >= 0.0)) throw ContractError("learning rate must be non-negative");
  if (data.empty()) throw ContractError("train on an empty dataset");
  TrainResult result;
  ParameterList params = state.model.parameters();
  for (std::size_t local = 0; local < options.steps; ++local) {
    const TokenBatch batch = flatten(batch_for_step(data, state.step, options.batch_sequences));
    LossBundle bundle;
    Tape tape;
    Var total;
    try {
      ToyModel::Vars v = state.model.forward(tape, batch.tokens, policy);
      Var lm = lm_loss(v.logits, batch.targets);
      bundle = total_loss(lm.scalar(), v.layer.tir.scalar(), v.layer.balance.scalar(), options.weights);
      total = total_loss(lm, v.layer.tir, v.layer.balance, options.weights);
    } catch (const NumericError& e) {
      throw NumericError(fmt::format("non-finite loss at step {}: {}", state.step, e.what()));
    }
    if (!std::isfinite(bundle.total)) {
      throw NumericError(fmt::format("non-finite loss at step {}: lm={} tir={} balance={}",
                                     state.step, bundle.lm, bundle.tir, bundle.balance));
    }
    zero_grads(params);
    tape.backward(total);
    adam_update(params, state.optimizer, options.adam);
    result.curve.push_back({state.step, bundle});
    ++state.step;

    const bool last = local + 1 == options.steps;
    if (!eval_data.empty() && options.eval_interval > 0 &&
        (state.step % options.eval_interval == 0 || last)) {
      const RoutingPolicy eval_policy = policy;
      result.evals.push_back({state.step, evaluate(state.model, eval_data, eval_policy)});
    }
  }
  return result;
}

}  // namespace anyexperts::harness
