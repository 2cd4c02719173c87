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

#include "anyexperts/baselines.hpp"

#include <fmt/format.h>
#include <limits>

#include "anyexperts/errors.hpp"
#include "anyexperts/ops.hpp"

namespace anyexperts {

void BaselineConfig::validate() const {
  if (e_real == 0) throw ConfigError("baseline router needs at least one real expert");
  if (const auto* topk = std::get_if<TopK>(&kind)) {
    if (topk->k < 1 || topk->k > e_real) {
      throw ConfigError(fmt::format("top-k k={} must lie in [1, e_real={}]", topk->k, e_real));
    }
  } else {
    const double p = std::get<TopP>(kind).threshold;
    if (!(p > 0.0 && p <= 1.0)) throw ConfigError("top-p threshold must lie in (0, 1]");
  }
  if (!(lambda > 0.0)) throw ConfigError("lambda must be positive");
  if (!(eps > 0.0)) throw ConfigError("eps must be positive");
}

std::vector<std::size_t> select_topp(std::span<const double> probs, double threshold) {
  if (!(threshold > 0.0 && threshold <= 1.0)) throw ConfigError("top-p threshold must lie in (0, 1]");
  if (probs.empty()) throw ContractError("select_topp with no experts");
  std::vector<std::size_t> selected;
  double cumulative = 0.0;
  for (std::size_t e : rank_experts(probs)) {
    selected.push_back(e);
    cumulative += probs[e];
    if (cumulative >= threshold) break;
  }
  return selected;
}

RouteVars route_baseline(Tape& tape, Var h, const GatingNetwork& gate, const BaselineConfig& cfg) {
  cfg.validate();
  if (gate.num_experts() < cfg.e_real) {
    throw DimensionError(fmt::format("gate has {} columns, fewer than e_real={}",
                                     gate.num_experts(), cfg.e_real));
  }
  const std::size_t n = h.rows(), e_total = gate.num_experts();
  RouteVars out;
  out.logits = gate.logits(tape, h);
  out.modulated = out.logits;
  out.probs = ops::softmax_rows(ops::slice_cols(out.logits, 0, cfg.e_real));

  const Matrix& logits = out.logits.value();
  const Matrix& probs = out.probs.value();
  out.decisions.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    RoutingDecision& d = out.decisions[i];
    const auto real_logits = logits.row(i).first(cfg.e_real);
    if (const auto* topk = std::get_if<TopK>(&cfg.kind)) {
      auto order = rank_experts(real_logits);
      d.selected.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(topk->k));
    } else {
      d.selected = select_topp(probs.row(i), std::get<TopP>(cfg.kind).threshold);
    }
    d.k_hat = d.k_real = d.selected.size();
    d.modulated_logits.assign(logits.row(i).begin(), logits.row(i).end());
    for (std::size_t e = cfg.e_real; e < e_total; ++e)
      d.modulated_logits[e] = -std::numeric_limits<double>::infinity();
    d.probs.assign(e_total, 0.0);
    for (std::size_t e = 0; e < cfg.e_real; ++e) d.probs[e] = probs(i, e);
  }
  out.gamma = combine_weights(out.logits, out.decisions, cfg.lambda, cfg.eps);
  std::size_t slot = 0;
  for (RoutingDecision& d : out.decisions) {
    d.gamma.resize(d.selected.size());
    for (double& g : d.gamma) g = out.gamma.value()[slot++];
  }
  return out;
}

namespace {

std::vector<RoutingDecision> route_plain(const Matrix& h, const GatingNetwork& gate,
                                         const BaselineConfig& cfg) {
  Tape tape;
  return route_baseline(tape, tape.constant(h), gate, cfg).decisions;
}

}  // namespace

std::vector<RoutingDecision> route_topk(const Matrix& h, const GatingNetwork& gate,
                                        const BaselineConfig& cfg) {
  if (!std::holds_alternative<TopK>(cfg.kind)) throw ConfigError("route_topk needs a TopK config");
  return route_plain(h, gate, cfg);
}

std::vector<RoutingDecision> route_topp(const Matrix& h, const GatingNetwork& gate,
                                        const BaselineConfig& cfg) {
  if (!std::holds_alternative<TopP>(cfg.kind)) throw ConfigError("route_topp needs a TopP config");
  return route_plain(h, gate, cfg);
}

}  // namespace anyexperts
