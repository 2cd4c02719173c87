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

#ifndef ANYEXPERTS_OPS_HPP_
#define ANYEXPERTS_OPS_HPP_

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "anyexperts/tape.hpp"

// Differentiable primitives recorded on the operands' tape. All operands of a
// call must live on the same tape.
namespace anyexperts::ops {

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var scale(Var a, double factor);
Var add_scalar(Var a, double offset);
// a (n×c) + bias (1×c) broadcast over rows.
Var add_row(Var a, Var bias);
// a (n×c) with row i multiplied by s(i, 0); s is n×1.
Var mul_rows(Var a, Var s);
// s (n×1) repeated into n×cols.
Var broadcast_cols(Var s, std::size_t cols);

Var sigmoid(Var a);
Var relu(Var a);
Var square(Var a);

Var sum(Var a);
Var mean(Var a);
// Column means: n×c -> 1×c.
Var mean_rows(Var a);
// Sum of elementwise products -> 1×1.
Var dot(Var a, Var b);

// Row-wise LayerNorm with biased variance; gain and bias are 1×d.
Var layer_norm_rows(Var x, Var gain, Var bias, double eps);
Var softmax_rows(Var a);
Var log_softmax_rows(Var a);

Var slice_cols(Var a, std::size_t begin, std::size_t end);
Var gather_rows(Var a, std::vector<std::size_t> rows);
// out(rows[i], :) += a(i, :), out has n_out rows.
Var scatter_add_rows(Var a, std::vector<std::size_t> rows, std::size_t n_out);
// Picks individual elements (row, col) into an m×1 column.
Var gather(Var a, std::vector<std::pair<std::size_t, std::size_t>> positions);

}  // namespace anyexperts::ops

#endif  // ANYEXPERTS_OPS_HPP_
