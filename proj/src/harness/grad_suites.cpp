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

#include "anyexperts/harness/grad_suites.hpp"

#include "anyexperts/harness/synthetic.hpp"
#include "anyexperts/ops.hpp"

namespace anyexperts::harness {

ForwardOptions FrozenRouting::options() {
  ForwardOptions o;
  o.selection_override = [this](std::size_t token, std::span<const double> modulated,
                                std::size_t k_hat) {
    if (token >= picks_.size()) picks_.resize(token + 1);
    if (!picks_[token]) picks_[token] = select_experts(modulated, k_hat, cfg_);
    return *picks_[token];
  };
  return o;
}

void randomize_estimator_output(ImportanceEstimator& est, Rng& rng) {
  // Hidden biases move off zero too: a token whose previous layer is fully
  // inactive would otherwise sit exactly on a ReLU kink.
  for (std::size_t l = 0; l + 1 < est.layers.size(); ++l) {
    Matrix& b = est.layers[l].bias.value;
    for (std::size_t i = 0; i < b.size(); ++i) b[i] = rng.uniform(0.05, 0.25);
  }
  DenseLayer& last = est.layers.back();
  for (std::size_t i = 0; i < last.weight.value.size(); ++i) last.weight.value[i] = rng.uniform(-1.0, 1.0);
  for (std::size_t i = 0; i < last.bias.value.size(); ++i) last.bias.value[i] = rng.uniform(-0.5, 0.5);
}

namespace {

Matrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng) {
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = rng.normal();
  return m;
}

RouterConfig small_router() {
  RouterConfig r;
  r.k_min = 2;
  r.k_max = 4;
  r.e_real = 4;
  r.e_virtual = 2;
  r.rho_max = 0.34;
  r.alpha = 0.1;  // large enough that the fusion path shows up in the numbers
  return r;
}

constexpr std::size_t kTokens = 6;
constexpr std::size_t kDim = 8;

GradCheckReport importance_suite(EstimatorVariant variant, const GradSuiteOptions& o) {
  Rng rng(o.seed);
  ImportanceEstimator est(kDim, variant, rng);
  randomize_estimator_output(est, rng);
  const Matrix h = random_matrix(kTokens, kDim, rng);
  const Matrix c = random_matrix(kTokens, kDim, rng);
  const LossBuilder loss = [&](Tape& t) {
    ImportanceVars iv = estimate(t, est, t.constant(h), 0.1);
    return ops::add(ops::sum(ops::mul(iv.h_fused, t.constant(c))), tir_loss(iv.weight));
  };
  return check_gradients(loss, est.parameters(), o.step, o.tol);
}

GradCheckReport gate_suite(const GradSuiteOptions& o) {
  Rng rng(o.seed + 1);
  const RouterConfig cfg = small_router();
  GatingNetwork gate(kDim, cfg.num_experts(), rng);
  const Matrix h = random_matrix(kTokens, kDim, rng);
  Matrix w(kTokens, 1);
  for (std::size_t i = 0; i < kTokens; ++i) w[i] = rng.uniform(0.05, 0.95);
  FrozenRouting frozen(cfg);
  const SelectionOverride select = frozen.options().selection_override;
  Matrix c;
  const LossBuilder loss = [&](Tape& t) {
    RouteVars rv = route(t, t.constant(h), t.constant(w), gate, cfg, select);
    if (c.size() != rv.gamma.value().size()) c = random_matrix(rv.gamma.rows(), 1, rng);
    const LoadStats stats = load_stats(rv.decisions, rv.probs.value(), cfg.e_real, cfg.e_virtual);
    return ops::add(ops::dot(rv.gamma, t.constant(c)), balance_loss(rv.probs, stats));
  };
  return check_gradients(loss, gate.parameters(), o.step, o.tol);
}

GradCheckReport layer_suite(const RoutingPolicy& policy, const GradSuiteOptions& o) {
  Rng rng(o.seed + 2);
  LayerConfig cfg;
  cfg.dim = kDim;
  cfg.d_ff = 16;
  cfg.router = small_router();
  AnyExpertsLayer layer(cfg, rng);
  randomize_estimator_output(layer.estimator, rng);
  const Matrix h = random_matrix(kTokens, kDim, rng);
  const Matrix c = random_matrix(kTokens, kDim, rng);
  FrozenRouting frozen(cfg.router);
  const ForwardOptions fo = frozen.options();
  const LossBuilder loss = [&](Tape& t) {
    AnyExpertsLayer::Vars v = layer.forward(t, t.constant(h), policy, fo);
    return total_loss(ops::sum(ops::mul(v.output, t.constant(c))), v.tir, v.balance, LossWeights{});
  };
  return check_gradients(loss, layer.parameters(), o.step, o.tol);
}

}  // namespace

ModelConfig gradient_model_config() {
  ModelConfig cfg;
  cfg.vocab = 16;
  cfg.layer.dim = kDim;
  cfg.layer.d_ff = 16;
  cfg.layer.router = small_router();
  return cfg;
}

GradCheckReport check_model_gradients(const GradSuiteOptions& o) {
  const ModelConfig cfg = gradient_model_config();
  TrainState state = TrainState::initialize(cfg, o.seed);
  Rng rng(o.seed + 3);
  randomize_estimator_output(state.model.layer.estimator, rng);
  const TokenBatch batch = flatten(generate(o.seed, 2, 8, 0.5, StreamSpec{cfg.vocab, 4}));
  FrozenRouting frozen(cfg.layer.router);
  const ForwardOptions fo = frozen.options();
  const LossBuilder loss = [&](Tape& t) {
    return step_loss(t, state.model, batch, cfg.layer.router, LossWeights{}, fo);
  };
  return check_gradients(loss, state.model.parameters(), o.step, o.tol);
}

std::vector<GradSuite> run_gradient_suites(const GradSuiteOptions& o) {
  std::vector<GradSuite> out;
  for (EstimatorVariant v : {EstimatorVariant::kDefault, EstimatorVariant::kWide, EstimatorVariant::kDeep}) {
    out.push_back({"importance/" + std::string(variant_name(v)), importance_suite(v, o)});
  }
  out.push_back({"routing/gate", gate_suite(o)});
  const RouterConfig router = small_router();
  out.push_back({"moe_layer/anyexperts", layer_suite(router, o)});
  out.push_back({"moe_layer/topk", layer_suite(BaselineConfig{TopK{2}, router.e_real}, o)});
  out.push_back({"moe_layer/topp", layer_suite(BaselineConfig{TopP{0.6}, router.e_real}, o)});
  out.push_back({"model/full", check_model_gradients(o)});
  return out;
}

}  // namespace anyexperts::harness
