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

#include "anyexperts/importance.hpp"

#include <cmath>
#include <fmt/format.h>

#include "anyexperts/errors.hpp"
#include "anyexperts/ops.hpp"

namespace anyexperts {

std::string_view variant_name(EstimatorVariant v) {
  switch (v) {
    case EstimatorVariant::kDefault:
      return "default";
    case EstimatorVariant::kWide:
      return "wide";
    case EstimatorVariant::kDeep:
      return "deep";
  }
  return "default";
}

EstimatorVariant parse_variant(std::string_view name) {
  if (name == "default") return EstimatorVariant::kDefault;
  if (name == "wide") return EstimatorVariant::kWide;
  if (name == "deep") return EstimatorVariant::kDeep;
  throw ConfigError(fmt::format("unknown estimator variant '{}'", name));
}

namespace {

DenseLayer make_layer(const std::string& name, std::size_t fan_in, std::size_t fan_out, Rng& rng,
                      bool zero) {
  Matrix w(fan_in, fan_out);
  if (!zero) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = rng.uniform(-bound, bound);
  }
  return {Parameter(name + ".weight", std::move(w)),
          Parameter(name + ".bias", Matrix(1, fan_out))};
}

}  // namespace

ImportanceEstimator::ImportanceEstimator(std::size_t dim, EstimatorVariant variant, Rng& rng,
                                         const std::string& prefix)
    : norm_gain(prefix + ".norm.gain", Matrix(1, dim, 1.0)),
      norm_bias(prefix + ".norm.bias", Matrix(1, dim)),
      dim_(dim),
      variant_(variant) {
  if (dim == 0) throw ConfigError("importance estimator needs d > 0");
  const std::size_t quarter = (dim + 3) / 4;
  std::vector<std::size_t> widths;
  switch (variant) {
    case EstimatorVariant::kDefault:
      widths = {dim, quarter, 1};
      break;
    case EstimatorVariant::kWide:
      widths = {dim, dim, 1};
      break;
    case EstimatorVariant::kDeep:
      widths = {dim, quarter, quarter, 1};
      break;
  }
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const bool last = l + 2 == widths.size();
    layers.push_back(make_layer(fmt::format("{}.mlp.{}", prefix, l), widths[l], widths[l + 1],
                                rng, last));
  }
}

Var ImportanceEstimator::score(Tape& tape, Var h) const {
  if (h.cols() != dim_) {
    throw DimensionError(fmt::format("importance estimator expects d={}, got hidden {}", dim_,
                                     h.value().shape_string()));
  }
  Var x = ops::layer_norm_rows(h, tape.parameter(norm_gain), tape.parameter(norm_bias), kNormEps);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const DenseLayer& layer = layers[l];
    x = ops::add_row(ops::matmul(x, tape.parameter(layer.weight)), tape.parameter(layer.bias));
    if (l + 1 < layers.size()) x = ops::relu(x);
  }
  return x;
}

ParameterList ImportanceEstimator::parameters() {
  ParameterList out{&norm_gain, &norm_bias};
  for (DenseLayer& l : layers) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  return out;
}

ImportanceVars estimate(Tape& tape, const ImportanceEstimator& est, Var h, double alpha) {
  if (h.rows() == 0) throw ContractError("importance estimate on an empty batch");
  if (!(alpha >= 0.0)) throw ConfigError("alpha must be non-negative");
  Var s = est.score(tape, h);
  Var w = ops::sigmoid(s);
  Var h_fused = ops::mul_rows(h, ops::add_scalar(ops::scale(w, alpha), 1.0));
  return {s, w, h_fused};
}

ImportanceResult estimate(const ImportanceEstimator& est, const Matrix& h, double alpha) {
  Tape tape;
  ImportanceVars v = estimate(tape, est, tape.constant(h), alpha);
  ImportanceResult out;
  out.s.assign(v.score.value().data().begin(), v.score.value().data().end());
  out.w.assign(v.weight.value().data().begin(), v.weight.value().data().end());
  out.h_fused = v.h_fused.value();
  return out;
}

Var tir_loss(Var w) {
  if (w.value().empty()) throw ContractError("tir_loss on an empty batch");
  return ops::mean(ops::square(w));
}

double tir_loss(std::span<const double> w) {
  if (w.empty()) throw ContractError("tir_loss on an empty batch");
  double acc = 0.0;
  for (double v : w) acc += v * v;
  return acc / static_cast<double>(w.size());
}

}  // namespace anyexperts
