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

#include "anyexperts/moe_layer.hpp"

#include <cmath>
#include <fmt/format.h>

#include "anyexperts/errors.hpp"
#include "anyexperts/ops.hpp"

namespace anyexperts {

RealExpert::RealExpert(std::size_t dim, std::size_t d_ff, Rng& rng, const std::string& prefix)
    : w1(prefix + ".w1", Matrix(dim, d_ff)),
      b1(prefix + ".b1", Matrix(1, d_ff)),
      w2(prefix + ".w2", Matrix(d_ff, dim)),
      b2(prefix + ".b2", Matrix(1, dim)) {
  const double bound1 = 1.0 / std::sqrt(static_cast<double>(dim));
  const double bound2 = 1.0 / std::sqrt(static_cast<double>(d_ff));
  for (std::size_t i = 0; i < w1.value.size(); ++i) w1.value[i] = rng.uniform(-bound1, bound1);
  for (std::size_t i = 0; i < w2.value.size(); ++i) w2.value[i] = rng.uniform(-bound2, bound2);
}

Var RealExpert::forward(Tape& tape, Var x) const {
  Var hidden = ops::relu(ops::add_row(ops::matmul(x, tape.parameter(w1)), tape.parameter(b1)));
  return ops::add_row(ops::matmul(hidden, tape.parameter(w2)), tape.parameter(b2));
}

Matrix RealExpert::forward(const Matrix& x) const {
  Tape tape;
  return forward(tape, tape.constant(x)).value();
}

LoadStats load_stats(const std::vector<RoutingDecision>& decisions, const Matrix& probs,
                     std::size_t e_real, std::size_t e_virtual) {
  const std::size_t n = decisions.size();
  if (n == 0) throw ContractError("load statistics over an empty batch");
  const std::size_t e_total = e_real + e_virtual;
  if (probs.rows() != n || probs.cols() != e_total) {
    throw DimensionError(fmt::format("load_stats: probabilities {} for {} tokens and {} experts",
                                     probs.shape_string(), n, e_total));
  }
  LoadStats s;
  s.e_real = e_real;
  s.e_virtual = e_virtual;
  s.n_tokens = n;
  s.c.assign(e_real, 0.0);
  double slots = 0.0, real_slots = 0.0;
  for (const RoutingDecision& d : decisions) {
    for (std::size_t e : d.selected) {
      if (e < e_real) {
        s.c[e] += 1.0;
      } else if (e < e_total) {
        s.t_virtual += 1.0;
      } else {
        throw DimensionError(fmt::format("expert id {} outside the {} accounted experts", e, e_total));
      }
    }
    slots += static_cast<double>(d.k_hat);
    real_slots += static_cast<double>(d.k_real);
  }
  const double nd = static_cast<double>(n);
  s.f.assign(e_total, 0.0);
  for (std::size_t k = 0; k < e_real; ++k) s.f[k] = s.c[k] / nd;
  for (std::size_t k = e_real; k < e_total; ++k)
    s.f[k] = s.t_virtual / (static_cast<double>(e_virtual) * nd);
  s.p.assign(e_total, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < e_total; ++k) s.p[k] += probs(i, k);
  for (double& v : s.p) v /= nd;
  s.avg_k_hat = slots / nd;
  s.avg_k_real = real_slots / nd;
  s.virtual_share = slots > 0.0 ? s.t_virtual / slots : 0.0;
  return s;
}

void LoadStats::validate() const {
  if (n_tokens == 0) throw ContractError("load statistics over zero tokens");
  const std::size_t e_total = e_real + e_virtual;
  if (c.size() != e_real || f.size() != e_total || p.size() != e_total) {
    throw ContractError("load statistics vectors have inconsistent lengths");
  }
  if (e_virtual == 0 && t_virtual != 0.0) {
    throw ContractError("virtual traffic recorded without virtual experts");
  }
  const double nd = static_cast<double>(n_tokens);
  double counted = t_virtual, f_sum = 0.0;
  for (double v : c) counted += v;
  for (double v : f) f_sum += v;
  const double slots = avg_k_hat * nd;
  if (std::abs(counted - slots) > 1e-9 * std::max(1.0, slots)) {
    throw ContractError(fmt::format("load counts {} disagree with {} routed slots", counted, slots));
  }
  if (std::abs(f_sum - avg_k_hat) > 1e-9 * std::max(1.0, avg_k_hat)) {
    throw ContractError("calibrated fractions do not sum to the average slot count");
  }
  for (std::size_t k = e_real; k < e_total; ++k) {
    const double expected = t_virtual / (static_cast<double>(e_virtual) * nd);
    if (std::abs(f[k] - expected) > 1e-12 * std::max(1.0, expected)) {
      throw ContractError("virtual fractions are not evenly spread");
    }
  }
}

nlohmann::json LoadStats::to_json() const {
  return {{"c", c},
          {"t_virtual", t_virtual},
          {"f", f},
          {"p", p},
          {"n_tokens", n_tokens},
          {"avg_k_hat", avg_k_hat},
          {"avg_k_real", avg_k_real},
          {"virtual_share", virtual_share}};
}

double balance_loss(const LoadStats& stats) {
  stats.validate();
  double acc = 0.0;
  for (std::size_t k = 0; k < stats.f.size(); ++k) acc += stats.f[k] * stats.p[k];
  return acc;
}

Var balance_loss(Var probs, const LoadStats& stats) {
  stats.validate();
  if (probs.cols() != stats.f.size()) {
    throw DimensionError(fmt::format("balance_loss: {} probability columns for {} fractions",
                                     probs.cols(), stats.f.size()));
  }
  Var fractions = probs.tape()->constant(Matrix::row_vector(stats.f));
  return ops::dot(fractions, ops::mean_rows(probs));
}

namespace {

void check_targets(std::size_t rows, std::size_t vocab, std::span<const std::size_t> targets) {
  if (rows != targets.size()) {
    throw DimensionError(fmt::format("lm_loss: {} logit rows for {} targets", rows, targets.size()));
  }
  if (rows == 0) throw ContractError("lm_loss over zero positions");
  for (std::size_t t : targets) {
    if (t >= vocab) {
      throw ContractError(fmt::format("target id {} outside vocabulary of {}", t, vocab));
    }
  }
}

}  // namespace

Var lm_loss(Var logits, std::span<const std::size_t> targets) {
  check_targets(logits.rows(), logits.cols(), targets);
  std::vector<std::pair<std::size_t, std::size_t>> picks;
  picks.reserve(targets.size());
  for (std::size_t i = 0; i < targets.size(); ++i) picks.emplace_back(i, targets[i]);
  return ops::scale(ops::mean(ops::gather(ops::log_softmax_rows(logits), std::move(picks))), -1.0);
}

double lm_loss(const Matrix& logits, std::span<const std::size_t> targets) {
  Tape tape;
  return lm_loss(tape.constant(logits), targets).scalar();
}

LossBundle total_loss(double lm, double tir, double balance, const LossWeights& weights) {
  LossBundle b;
  b.lm = lm;
  b.tir = tir;
  b.balance = balance;
  b.lambda_tir = weights.tir;
  b.lambda_bal = weights.balance;
  b.total = lm + weights.tir * tir + weights.balance * balance;
  return b;
}

Var total_loss(Var lm, Var tir, Var balance, const LossWeights& weights) {
  return ops::add(ops::add(lm, ops::scale(tir, weights.tir)), ops::scale(balance, weights.balance));
}

AnyExpertsLayer::AnyExpertsLayer(const LayerConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg_.router.validate();
  if (cfg.dim == 0 || cfg.d_ff == 0) throw ConfigError("layer dimensions must be positive");
  Rng est_rng = rng.split(1), gate_rng = rng.split(2), expert_rng = rng.split(3);
  estimator = ImportanceEstimator(cfg.dim, cfg.estimator, est_rng, "importance");
  gate = GatingNetwork(cfg.dim, cfg.router.num_experts(), gate_rng, "gate");
  experts.reserve(cfg.router.num_experts());
  for (std::size_t e = 0; e < cfg.router.e_real; ++e) {
    Rng r = expert_rng.split(e);
    experts.emplace_back(RealExpert(cfg.dim, cfg.d_ff, r, fmt::format("expert.{}", e)));
  }
  for (std::size_t e = 0; e < cfg.router.e_virtual; ++e) experts.emplace_back(VirtualExpert{});
}

ParameterList AnyExpertsLayer::parameters() {
  ParameterList out = estimator.parameters();
  for (Parameter* p : gate.parameters()) out.push_back(p);
  for (Expert& e : experts) {
    if (auto* real = std::get_if<RealExpert>(&e)) {
      out.insert(out.end(), {&real->w1, &real->b1, &real->w2, &real->b2});
    }
  }
  return out;
}

Var AnyExpertsLayer::combine(Tape& tape, Var h_fused, const RouteVars& routes) const {
  const std::size_t n = h_fused.rows();
  std::vector<std::vector<std::size_t>> tokens(experts.size()), slots(experts.size());
  std::size_t slot = 0;
  for (std::size_t i = 0; i < routes.decisions.size(); ++i) {
    for (std::size_t e : routes.decisions[i].selected) {
      tokens[e].push_back(i);
      slots[e].push_back(slot++);
    }
  }
  Var out;
  for (std::size_t e = 0; e < experts.size(); ++e) {
    if (tokens[e].empty()) continue;
    Var x = ops::gather_rows(h_fused, tokens[e]);
    Var y = std::holds_alternative<RealExpert>(experts[e])
                ? std::get<RealExpert>(experts[e]).forward(tape, x)
                : x;
    Var gamma = ops::gather_rows(routes.gamma, slots[e]);
    Var contribution = ops::scatter_add_rows(ops::mul_rows(y, gamma), tokens[e], n);
    out = out.valid() ? ops::add(out, contribution) : contribution;
  }
  if (!out.valid()) throw InvariantError("no expert received any token");
  return out;
}

AnyExpertsLayer::Vars AnyExpertsLayer::forward(Tape& tape, Var h, const RoutingPolicy& policy,
                                               const ForwardOptions& options) const {
  if (h.cols() != cfg_.dim) {
    throw DimensionError(fmt::format("layer expects d={}, got hidden {}", cfg_.dim,
                                     h.value().shape_string()));
  }
  if (h.rows() == 0) throw ContractError("forward on an empty batch");
  Vars v;
  Var h_fused;
  std::size_t accounted_virtual = 0;
  if (const auto* router = std::get_if<RouterConfig>(&policy)) {
    if (router->e_real != cfg_.router.e_real || router->e_virtual != cfg_.router.e_virtual) {
      throw ConfigError("routing policy expert counts do not match the layer");
    }
    v.importance = estimate(tape, estimator, h, router->alpha);
    h_fused = v.importance.h_fused;
    v.routes = route(tape, h_fused, v.importance.weight, gate, *router, options.selection_override);
    v.tir = tir_loss(v.importance.weight);
    accounted_virtual = router->e_virtual;
  } else {
    const auto& baseline = std::get<BaselineConfig>(policy);
    if (baseline.e_real != cfg_.router.e_real) {
      throw ConfigError("baseline e_real does not match the layer");
    }
    h_fused = h;
    v.routes = route_baseline(tape, h, gate, baseline);
    v.tir = tape.constant(Matrix(1, 1));
  }
  v.stats = load_stats(v.routes.decisions, v.routes.probs.value(), cfg_.router.e_real,
                       accounted_virtual);
  v.balance = balance_loss(v.routes.probs, v.stats);
  v.output = combine(tape, h_fused, v.routes);
  return v;
}

AnyExpertsLayer::Output AnyExpertsLayer::forward(const HiddenBatch& h, const RoutingPolicy& policy,
                                                 const ForwardOptions& options) const {
  Tape tape;
  Vars v = forward(tape, tape.constant(h.hidden), policy, options);
  Output out;
  out.output = v.output.value();
  out.decisions = std::move(v.routes.decisions);
  out.stats = std::move(v.stats);
  if (v.importance.weight.valid()) {
    const auto w = v.importance.weight.value().data();
    out.w.assign(w.begin(), w.end());
    out.h_fused = v.importance.h_fused.value();
  } else {
    out.h_fused = h.hidden;
  }
  return out;
}

}  // namespace anyexperts
