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

#ifndef ANYEXPERTS_ROUTING_HPP_
#define ANYEXPERTS_ROUTING_HPP_

#include <cstddef>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "anyexperts/batch.hpp"
#include "anyexperts/matrix.hpp"
#include "anyexperts/rng.hpp"
#include "anyexperts/tape.hpp"

namespace anyexperts {

// Hyperparameters of the dynamic router. Defaults follow the reference
// configuration: 8..12 slots, 64 virtual copies next to 256 real experts,
// at most 20% virtual slots, alpha = 0.01.
struct RouterConfig {
  std::size_t k_min = 8;
  std::size_t k_max = 12;
  std::size_t e_real = 256;
  std::size_t e_virtual = 64;
  double rho_max = 0.2;
  double alpha = 0.01;
  double lambda = 1.0;
  double eps = 1e-8;
  // Inference-time multiplier on the continuous slot count.
  double budget_scale = 1.0;

  std::size_t num_experts() const { return e_real + e_virtual; }
  bool is_virtual(std::size_t expert) const { return expert >= e_real; }
  // Throws ConfigError naming the violated constraint.
  void validate() const;
};

// Linear gate producing one logit per expert: real experts occupy columns
// [0, e_real), virtual copies [e_real, E).
class GatingNetwork {
 public:
  GatingNetwork() = default;
  GatingNetwork(std::size_t dim, std::size_t num_experts, Rng& rng,
                const std::string& prefix = "gate");

  std::size_t dim() const { return weight.value.rows(); }
  std::size_t num_experts() const { return weight.value.cols(); }

  Var logits(Tape& tape, Var h) const;
  Matrix logits(const Matrix& h) const;
  ParameterList parameters() { return {&weight, &bias}; }

  Parameter weight;  // d × E
  Parameter bias;    // 1 × E
};

struct RoutingDecision {
  std::size_t k_hat = 0;
  std::size_t k_real = 0;
  std::size_t k_virtual = 0;
  std::vector<std::size_t> selected;      // in rank order
  std::vector<double> gamma;              // aligned with `selected`
  std::vector<double> modulated_logits;   // length E
  std::vector<double> probs;              // softmax of modulated_logits, length E
};

struct Modulation {
  double phi_real = 1.0;
  double phi_virtual = 1.0;
};

// Total slots for a token with importance weight w.
std::size_t slot_count(double w, const RouterConfig& cfg);
// (1 + alpha w, 1 - alpha w); throws ConfigError if alpha w >= 1.
Modulation modulation(double w, double alpha);

// Expert ids sorted by descending logit, ties to the lower id.
std::vector<std::size_t> rank_experts(std::span<const double> logits);
// Greedy top-k_hat over the ranking that skips virtual experts once
// floor(rho_max k_hat) of them are taken. Throws InvariantError if the
// ranking cannot supply k_hat experts.
std::vector<std::size_t> select_experts(std::span<const double> modulated, std::size_t k_hat,
                                        const RouterConfig& cfg);

// gamma_e = sigmoid(r_e) / (sum_selected sigmoid(r) + eps) * lambda.
std::vector<double> combine_weights(const RoutingDecision& decision, const RouterConfig& cfg);
std::vector<double> combine_weights(std::span<const double> logits,
                                    std::span<const std::size_t> selected, double lambda,
                                    double eps);

// Optional replacement for the greedy selection, used by tests to force a
// particular expert set. Receives (token, modulated logits, k_hat).
using SelectionOverride = std::function<std::vector<std::size_t>(
    std::size_t, std::span<const double>, std::size_t)>;

// (token, expert) for every selected slot, token-major, in rank order. This is
// the row order of RouteVars::gamma.
std::vector<std::pair<std::size_t, std::size_t>> assignments(
    const std::vector<RoutingDecision>& decisions);

struct RouteVars {
  Var logits;     // n×E raw
  Var modulated;  // n×E
  Var probs;      // n×E
  Var gamma;      // m×1, rows follow assignments(decisions)
  std::vector<RoutingDecision> decisions;
};

// Differentiable gamma over the given selections: logits are n×E.
Var combine_weights(Var logits, const std::vector<RoutingDecision>& decisions,
                    double lambda, double eps);

// Modulates logits r' = r * phi per column group.
Var modulate(Tape& tape, Var logits, Var w, const RouterConfig& cfg);

RouteVars route(Tape& tape, Var h_fused, Var w, const GatingNetwork& gate,
                const RouterConfig& cfg, const SelectionOverride& override_selection = {});
std::vector<RoutingDecision> route(const Matrix& h_fused, std::span<const double> w,
                                   const GatingNetwork& gate, const RouterConfig& cfg);

// One JSON-lines record: {token_index, modality, w, k_hat, k_real, k_virtual, selected, gamma}.
nlohmann::json decision_record(const RoutingDecision& d, std::size_t token_index,
                               Modality modality, double w);
void write_decisions_jsonl(std::ostream& out, const std::vector<RoutingDecision>& decisions,
                           std::span<const double> w, std::span<const Modality> modality);

}  // namespace anyexperts

#endif  // ANYEXPERTS_ROUTING_HPP_
