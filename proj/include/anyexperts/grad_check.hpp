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

#ifndef ANYEXPERTS_GRAD_CHECK_HPP_
#define ANYEXPERTS_GRAD_CHECK_HPP_

#include <cstddef>
#include <functional>
#include <string>

#include "anyexperts/tape.hpp"

namespace anyexperts {

struct GradCheckReport {
  std::size_t coordinates = 0;
  std::size_t failures = 0;
  double max_rel_error = 0.0;
  std::string worst_coordinate;  // "name[index]"
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  bool passed = false;
};

// Builds the scalar loss on a fresh tape from the current parameter values.
using LossBuilder = std::function<Var(Tape&)>;

// Compares reverse-mode gradients against central differences
// (f(p + step) - f(p - step)) / (2 step) for every coordinate of `params`.
// Relative error is |analytic - numeric| / max(1, |analytic|, |numeric|).
// Parameter values are restored afterwards; gradients are left holding the
// analytic result.
GradCheckReport check_gradients(const LossBuilder& loss, const ParameterList& params,
                                double step, double tol);

}  // namespace anyexperts

#endif  // ANYEXPERTS_GRAD_CHECK_HPP_
