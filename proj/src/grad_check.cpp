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

#include "anyexperts/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <vector>

#include "anyexperts/errors.hpp"

namespace anyexperts {

namespace {

double evaluate(const LossBuilder& loss, const std::string& coordinate) {
  double value = 0.0;
  try {
    Tape tape;
    value = loss(tape).scalar();
  } catch (const NumericError& e) {
    throw NumericError(fmt::format("non-finite loss while perturbing {}: {}", coordinate, e.what()));
  }
  if (!std::isfinite(value)) {
    throw NumericError(fmt::format("non-finite loss while perturbing {}", coordinate));
  }
  return value;
}

}  // namespace

GradCheckReport check_gradients(const LossBuilder& loss, const ParameterList& params,
                                double step, double tol) {
  if (!(step > 0.0)) throw ContractError("check_gradients: step must be positive");

  zero_grads(params);
  {
    Tape tape;
    Var l = loss(tape);
    tape.backward(l);
  }
  std::vector<Matrix> analytic;
  analytic.reserve(params.size());
  for (const Parameter* p : params) analytic.push_back(p->grad);

  GradCheckReport report;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Parameter& p = *params[pi];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const std::string coordinate = fmt::format("{}[{}]", p.name, i);
      const double saved = p.value[i];
      p.value[i] = saved + step;
      const double plus = evaluate(loss, coordinate);
      p.value[i] = saved - step;
      const double minus = evaluate(loss, coordinate);
      p.value[i] = saved;

      const double numeric = (plus - minus) / (2.0 * step);
      const double a = analytic[pi][i];
      const double rel =
          std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
      ++report.coordinates;
      if (rel > tol) ++report.failures;
      if (rel > report.max_rel_error || report.worst_coordinate.empty()) {
        report.max_rel_error = rel;
        report.worst_coordinate = coordinate;
        report.worst_analytic = a;
        report.worst_numeric = numeric;
      }
    }
  }
  report.passed = report.max_rel_error <= tol;
  return report;
}

}  // namespace anyexperts
