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

#ifndef ANYEXPERTS_BASELINES_HPP_
#define ANYEXPERTS_BASELINES_HPP_

#include <cstddef>
#include <span>
#include <variant>
#include <vector>

#include "anyexperts/routing.hpp"

namespace anyexperts {

// Fixed number of experts per token.
struct TopK {
  std::size_t k = 8;
};

// Experts by descending probability until the cumulative mass reaches the
// threshold; the expert that crosses it is kept.
struct TopP {
  double threshold = 0.5;
};

// Static routers over the real columns of a GatingNetwork. Virtual columns,
// if the gate has any, are masked out.
struct BaselineConfig {
  std::variant<TopK, TopP> kind = TopK{};
  std::size_t e_real = 0;
  double lambda = 1.0;
  double eps = 1e-8;

  void validate() const;
};

// Ranks the real experts of one token by probability and applies the Top-P rule.
std::vector<std::size_t> select_topp(std::span<const double> probs, double threshold);

// Full routing over a batch. RouteVars::probs holds the softmax over real
// experts only (n × e_real); decisions carry length-E vectors with zeros in
// the virtual slots. gamma uses the same arithmetic as the dynamic router,
// applied to raw logits.
RouteVars route_baseline(Tape& tape, Var h, const GatingNetwork& gate, const BaselineConfig& cfg);

std::vector<RoutingDecision> route_topk(const Matrix& h, const GatingNetwork& gate,
                                        const BaselineConfig& cfg);
std::vector<RoutingDecision> route_topp(const Matrix& h, const GatingNetwork& gate,
                                        const BaselineConfig& cfg);

}  // namespace anyexperts

#endif  // ANYEXPERTS_BASELINES_HPP_
