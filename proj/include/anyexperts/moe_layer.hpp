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

#ifndef ANYEXPERTS_MOE_LAYER_HPP_
#define ANYEXPERTS_MOE_LAYER_HPP_

#include <cstddef>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "anyexperts/baselines.hpp"
#include "anyexperts/batch.hpp"
#include "anyexperts/importance.hpp"
#include "anyexperts/routing.hpp"
#include "anyexperts/tape.hpp"

namespace anyexperts {

// Two-layer ReLU feed-forward expert: relu(x W1 + b1) W2 + b2.
struct RealExpert {
  RealExpert() = default;
  RealExpert(std::size_t dim, std::size_t d_ff, Rng& rng, const std::string& prefix);

  Var forward(Tape& tape, Var x) const;
  Matrix forward(const Matrix& x) const;

  Parameter w1, b1, w2, b2;
};

// Returns its input unchanged and owns no parameters.
struct VirtualExpert {};

using Expert = std::variant<RealExpert, VirtualExpert>;

// Per-batch expert utilisation. Real experts keep their exact counts; all
// virtual traffic is pooled and spread evenly over the virtual copies.
struct LoadStats {
  std::size_t e_real = 0;
  std::size_t e_virtual = 0;
  std::size_t n_tokens = 0;
  std::vector<double> c;   // per real expert
  double t_virtual = 0.0;
  std::vector<double> f;   // calibrated fractions, length E
  std::vector<double> p;   // mean routing probabilities, length E
  double avg_k_hat = 0.0;
  double avg_k_real = 0.0;
  double virtual_share = 0.0;

  // Throws ContractError if the counts and fractions disagree.
  void validate() const;
  nlohmann::json to_json() const;
};

// `probs` is n × (number of probability columns); columns beyond e_real
// belong to virtual copies.
LoadStats load_stats(const std::vector<RoutingDecision>& decisions, const Matrix& probs,
                     std::size_t e_real, std::size_t e_virtual);

double balance_loss(const LoadStats& stats);
// Differentiable through the mean probabilities; the fractions are constants.
Var balance_loss(Var probs, const LoadStats& stats);

// Mean negative log-likelihood of the targets under softmax(logits).
Var lm_loss(Var logits, std::span<const std::size_t> targets);
double lm_loss(const Matrix& logits, std::span<const std::size_t> targets);

struct LossWeights {
  double tir = 0.001;
  double balance = 0.01;
};

struct LossBundle {
  double lm = 0.0;
  double tir = 0.0;
  double balance = 0.0;
  double total = 0.0;
  double lambda_tir = 0.001;
  double lambda_bal = 0.01;
};

LossBundle total_loss(double lm, double tir, double balance, const LossWeights& weights = {});
Var total_loss(Var lm, Var tir, Var balance, const LossWeights& weights);

struct LayerConfig {
  std::size_t dim = 16;
  std::size_t d_ff = 32;
  RouterConfig router;
  EstimatorVariant estimator = EstimatorVariant::kDefault;
};

// Either the dynamic importance-aware router or a static baseline. Baseline
// routing bypasses the importance estimator entirely.
using RoutingPolicy = std::variant<RouterConfig, BaselineConfig>;

struct ForwardOptions {
  SelectionOverride selection_override;  // dynamic policy only
};

class AnyExpertsLayer {
 public:
  struct Vars {
    Var output;             // n × d
    ImportanceVars importance;  // unset under a baseline policy
    RouteVars routes;
    LoadStats stats;
    Var tir;                // 1×1, zero under a baseline policy
    Var balance;            // 1×1
  };

  struct Output {
    Matrix output;
    std::vector<RoutingDecision> decisions;
    LoadStats stats;
    std::vector<double> w;  // empty under a baseline policy
    Matrix h_fused;
  };

  AnyExpertsLayer() = default;
  AnyExpertsLayer(const LayerConfig& cfg, Rng& rng);

  const LayerConfig& config() const { return cfg_; }

  Vars forward(Tape& tape, Var h, const RoutingPolicy& policy,
               const ForwardOptions& options = {}) const;
  Output forward(const HiddenBatch& h, const RoutingPolicy& policy,
                 const ForwardOptions& options = {}) const;

  ParameterList parameters();

  ImportanceEstimator estimator;
  GatingNetwork gate;
  std::vector<Expert> experts;  // real experts first, then virtual copies

 private:
  Var combine(Tape& tape, Var h_fused, const RouteVars& routes) const;

  LayerConfig cfg_;
};

}  // namespace anyexperts

#endif  // ANYEXPERTS_MOE_LAYER_HPP_
