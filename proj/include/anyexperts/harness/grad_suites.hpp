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

#ifndef ANYEXPERTS_HARNESS_GRAD_SUITES_HPP_
#define ANYEXPERTS_HARNESS_GRAD_SUITES_HPP_

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "anyexperts/grad_check.hpp"
#include "anyexperts/harness/model.hpp"

namespace anyexperts::harness {

// Records the greedy selection of the first forward pass and replays it on
// every later pass, so finite differences probe one fixed routing pattern.
class FrozenRouting {
 public:
  explicit FrozenRouting(RouterConfig cfg) : cfg_(std::move(cfg)) {}
  ForwardOptions options();

 private:
  RouterConfig cfg_;
  std::vector<std::optional<std::vector<std::size_t>>> picks_;
};

// Replaces the zero last layer of the estimator with random values so its
// hidden layers receive gradient, and shifts hidden biases off zero.
void randomize_estimator_output(ImportanceEstimator& est, Rng& rng);

struct GradSuiteOptions {
  double step = 1e-5;
  double tol = 1e-4;
  std::uint64_t seed = 7;
};

struct GradSuite {
  std::string name;
  GradCheckReport report;
};

// The d=8 model used by the full-model check: 4 real + 2 virtual experts.
ModelConfig gradient_model_config();

// Total-loss gradients of the whole desk model (embedding, estimator, gate,
// experts, head) against central differences, with routing frozen.
GradCheckReport check_model_gradients(const GradSuiteOptions& options = {});

// Estimator variants, gate/combination weights, the layer under every
// policy, and the full model.
std::vector<GradSuite> run_gradient_suites(const GradSuiteOptions& options = {});

}  // namespace anyexperts::harness

#endif  // ANYEXPERTS_HARNESS_GRAD_SUITES_HPP_
