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

#include "anyexperts/routing.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <numeric>
#include <ostream>

#include "anyexperts/errors.hpp"
#include "anyexperts/ops.hpp"

namespace anyexperts {

void RouterConfig::validate() const {
  if (k_min < 1) throw ConfigError("k_min must be at least 1");
  if (k_min > k_max) throw ConfigError(fmt::format("k_min={} exceeds k_max={}", k_min, k_max));
  if (k_max > num_experts()) {
    throw ConfigError(fmt::format("k_max={} exceeds e_real + e_virtual = {}", k_max, num_experts()));
  }
  if (!(rho_max >= 0.0 && rho_max < 1.0)) throw ConfigError("rho_max must lie in [0, 1)");
  if (static_cast<double>(k_max) * (1.0 - rho_max) > static_cast<double>(e_real)) {
    throw ConfigError(fmt::format("k_max * (1 - rho_max) = {} needs more than e_real={} real experts",
                                  static_cast<double>(k_max) * (1.0 - rho_max), e_real));
  }
  if (!(alpha >= 0.0 && alpha < 1.0)) throw ConfigError("alpha must lie in [0, 1)");
  if (!(lambda > 0.0)) throw ConfigError("lambda must be positive");
  if (!(eps > 0.0)) throw ConfigError("eps must be positive");
  if (!(budget_scale > 0.0 && budget_scale <= 1.0)) {
    throw ConfigError("budget_scale must lie in (0, 1]");
  }
}

GatingNetwork::GatingNetwork(std::size_t dim, std::size_t num_experts, Rng& rng,
                             const std::string& prefix)
    : weight(prefix + ".weight", Matrix(dim, num_experts)),
      bias(prefix + ".bias", Matrix(1, num_experts)) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(dim));
  for (std::size_t i = 0; i < weight.value.size(); ++i) weight.value[i] = rng.uniform(-bound, bound);
}

Var GatingNetwork::logits(Tape& tape, Var h) const {
  if (h.cols() != dim()) {
    throw DimensionError(
        fmt::format("gate expects d={}, got hidden {}", dim(), h.value().shape_string()));
  }
  return ops::add_row(ops::matmul(h, tape.parameter(weight)), tape.parameter(bias));
}

Matrix GatingNetwork::logits(const Matrix& h) const {
  Tape tape;
  return logits(tape, tape.constant(h)).value();
}

std::size_t slot_count(double w, const RouterConfig& cfg) {
  if (!(w >= 0.0 && w <= 1.0)) throw ContractError(fmt::format("importance weight {} outside [0, 1]", w));
  const double k_raw = static_cast<double>(cfg.k_min) +
                       static_cast<double>(cfg.k_max - cfg.k_min) * w;
  const double rounded = std::floor(k_raw * cfg.budget_scale + 0.5);
  return static_cast<std::size_t>(
      std::clamp(rounded, 1.0, static_cast<double>(cfg.k_max)));
}

Modulation modulation(double w, double alpha) {
  if (!(alpha >= 0.0)) throw ConfigError("alpha must be non-negative");
  if (alpha * w >= 1.0) {
    throw ConfigError(
        fmt::format("alpha * w = {} >= 1 would make the virtual factor non-positive", alpha * w));
  }
  return {1.0 + alpha * w, 1.0 - alpha * w};
}

std::vector<std::size_t> rank_experts(std::span<const double> logits) {
  std::vector<std::size_t> order(logits.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return logits[a] > logits[b];
  });
  return order;
}

std::vector<std::size_t> select_experts(std::span<const double> modulated, std::size_t k_hat,
                                        const RouterConfig& cfg) {
  if (modulated.size() != cfg.num_experts()) {
    throw DimensionError(fmt::format("select_experts: {} logits for {} experts", modulated.size(),
                                     cfg.num_experts()));
  }
  const auto virtual_cap =
      static_cast<std::size_t>(std::floor(cfg.rho_max * static_cast<double>(k_hat)));
  std::vector<std::size_t> selected;
  selected.reserve(k_hat);
  std::size_t n_virtual = 0;
  for (std::size_t e : rank_experts(modulated)) {
    if (selected.size() == k_hat) break;
    if (cfg.is_virtual(e)) {
      if (n_virtual == virtual_cap) continue;
      ++n_virtual;
    }
    selected.push_back(e);
  }
  if (selected.size() != k_hat) {
    throw InvariantError(fmt::format("only {} selectable experts for k_hat={}", selected.size(), k_hat));
  }
  return selected;
}

std::vector<double> combine_weights(std::span<const double> logits,
                                    std::span<const std::size_t> selected, double lambda,
                                    double eps) {
  if (selected.empty()) throw ContractError("combine_weights with no selected experts");
  std::vector<double> gamma;
  gamma.reserve(selected.size());
  double total = 0.0;
  for (std::size_t e : selected) {
    gamma.push_back(sigmoid(logits[e]));
    total += gamma.back();
  }
  for (double& g : gamma) g = g / (total + eps) * lambda;
  return gamma;
}

std::vector<double> combine_weights(const RoutingDecision& decision, const RouterConfig& cfg) {
  return combine_weights(decision.modulated_logits, decision.selected, cfg.lambda, cfg.eps);
}

std::vector<std::pair<std::size_t, std::size_t>> assignments(
    const std::vector<RoutingDecision>& decisions) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t i = 0; i < decisions.size(); ++i)
    for (std::size_t e : decisions[i].selected) out.emplace_back(i, e);
  return out;
}

Var combine_weights(Var logits, const std::vector<RoutingDecision>& decisions,
                    double lambda, double eps) {
  const auto slots = assignments(decisions);
  if (slots.empty()) throw ContractError("combine_weights with no selected experts");
  std::vector<std::size_t> owner;
  owner.reserve(slots.size());
  for (const auto& s : slots) owner.push_back(s.first);
  Var g = ops::sigmoid(ops::gather(logits, slots));
  Var per_token = ops::scatter_add_rows(g, owner, decisions.size());
  Var denom = ops::add_scalar(ops::gather_rows(per_token, owner), eps);
  return ops::scale(ops::div(g, denom), lambda);
}

Var modulate(Tape& tape, Var logits, Var w, const RouterConfig& cfg) {
  const std::size_t n = logits.rows(), e_total = logits.cols();
  if (e_total != cfg.num_experts()) {
    throw DimensionError(
        fmt::format("modulate: {} logit columns for {} experts", e_total, cfg.num_experts()));
  }
  if (w.rows() != n || w.cols() != 1) {
    throw DimensionError(fmt::format("modulate: weights {} for {} tokens", w.value().shape_string(), n));
  }
  for (std::size_t i = 0; i < n; ++i) (void)modulation(w.value()[i], cfg.alpha);
  Matrix sign(n, e_total);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t e = 0; e < e_total; ++e) sign(i, e) = cfg.is_virtual(e) ? -1.0 : 1.0;
  Var phi = ops::add_scalar(
      ops::scale(ops::mul(ops::broadcast_cols(w, e_total), tape.constant(std::move(sign))),
                 cfg.alpha),
      1.0);
  return ops::mul(logits, phi);
}

RouteVars route(Tape& tape, Var h_fused, Var w, const GatingNetwork& gate,
                const RouterConfig& cfg, const SelectionOverride& override_selection) {
  cfg.validate();
  if (gate.num_experts() != cfg.num_experts()) {
    throw DimensionError(fmt::format("gate has {} columns but config has {} experts",
                                     gate.num_experts(), cfg.num_experts()));
  }
  const std::size_t n = h_fused.rows();
  RouteVars out;
  out.logits = gate.logits(tape, h_fused);
  out.modulated = modulate(tape, out.logits, w, cfg);
  out.probs = ops::softmax_rows(out.modulated);

  const Matrix& mod = out.modulated.value();
  const Matrix& probs = out.probs.value();
  out.decisions.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    RoutingDecision& d = out.decisions[i];
    d.k_hat = slot_count(w.value()[i], cfg);
    d.selected = override_selection ? override_selection(i, mod.row(i), d.k_hat)
                                    : select_experts(mod.row(i), d.k_hat, cfg);
    if (d.selected.empty()) throw ContractError("selection override returned no experts");
    for (std::size_t e : d.selected) {
      if (e >= cfg.num_experts()) throw ContractError("selection override returned an unknown expert");
      ++(cfg.is_virtual(e) ? d.k_virtual : d.k_real);
    }
    d.k_hat = d.selected.size();
    d.modulated_logits.assign(mod.row(i).begin(), mod.row(i).end());
    d.probs.assign(probs.row(i).begin(), probs.row(i).end());
  }
  out.gamma = combine_weights(out.modulated, out.decisions, cfg.lambda, cfg.eps);
  std::size_t slot = 0;
  for (RoutingDecision& d : out.decisions) {
    d.gamma.resize(d.selected.size());
    for (double& g : d.gamma) g = out.gamma.value()[slot++];
  }
  return out;
}

std::vector<RoutingDecision> route(const Matrix& h_fused, std::span<const double> w,
                                   const GatingNetwork& gate, const RouterConfig& cfg) {
  Tape tape;
  return route(tape, tape.constant(h_fused), tape.constant(Matrix::column_vector(w)), gate, cfg)
      .decisions;
}

nlohmann::json decision_record(const RoutingDecision& d, std::size_t token_index,
                               Modality modality, double w) {
  return {{"token_index", token_index}, {"modality", modality_name(modality)},
          {"w", w},                     {"k_hat", d.k_hat},
          {"k_real", d.k_real},         {"k_virtual", d.k_virtual},
          {"selected", d.selected},     {"gamma", d.gamma}};
}

void write_decisions_jsonl(std::ostream& out, const std::vector<RoutingDecision>& decisions,
                           std::span<const double> w, std::span<const Modality> modality) {
  if (w.size() != decisions.size() || modality.size() != decisions.size()) {
    throw DimensionError("write_decisions_jsonl: per-token vectors disagree in length");
  }
  for (std::size_t i = 0; i < decisions.size(); ++i) {
    out << decision_record(decisions[i], i, modality[i], w[i]).dump() << '\n';
  }
}

}  // namespace anyexperts
