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

#ifndef ANYEXPERTS_IMPORTANCE_HPP_
#define ANYEXPERTS_IMPORTANCE_HPP_

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "anyexperts/matrix.hpp"
#include "anyexperts/rng.hpp"
#include "anyexperts/tape.hpp"

namespace anyexperts {

enum class EstimatorVariant {
  kDefault,  // d -> ceil(d/4) -> 1
  kWide,     // d -> d -> 1
  kDeep,     // d -> ceil(d/4) -> ceil(d/4) -> 1
};

std::string_view variant_name(EstimatorVariant v);
EstimatorVariant parse_variant(std::string_view name);  // throws ConfigError

struct DenseLayer {
  Parameter weight;  // fan_in × fan_out
  Parameter bias;    // 1 × fan_out
};

// LayerNorm followed by a small ReLU MLP that emits one raw score per token.
// The last layer starts at zero, so every token starts at w = 0.5.
class ImportanceEstimator {
 public:
  ImportanceEstimator() = default;
  ImportanceEstimator(std::size_t dim, EstimatorVariant variant, Rng& rng,
                      const std::string& prefix = "importance");

  std::size_t dim() const { return dim_; }
  EstimatorVariant variant() const { return variant_; }
  static constexpr double kNormEps = 1e-5;

  // Raw scores s (n×1) for the rows of h.
  Var score(Tape& tape, Var h) const;

  ParameterList parameters();

  Parameter norm_gain;
  Parameter norm_bias;
  std::vector<DenseLayer> layers;

 private:
  std::size_t dim_ = 0;
  EstimatorVariant variant_ = EstimatorVariant::kDefault;
};

struct ImportanceVars {
  Var score;     // n×1 raw s
  Var weight;    // n×1, sigmoid(s)
  Var h_fused;   // n×d, h * (1 + alpha w)
};

struct ImportanceResult {
  std::vector<double> s;
  std::vector<double> w;
  Matrix h_fused;
};

ImportanceVars estimate(Tape& tape, const ImportanceEstimator& est, Var h, double alpha);
ImportanceResult estimate(const ImportanceEstimator& est, const Matrix& h, double alpha);

// Mean squared importance weight.
Var tir_loss(Var w);
double tir_loss(std::span<const double> w);

}  // namespace anyexperts

#endif  // ANYEXPERTS_IMPORTANCE_HPP_
