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

#ifndef ANYEXPERTS_TAPE_HPP_
#define ANYEXPERTS_TAPE_HPP_

#include <cstddef>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "anyexperts/matrix.hpp"

namespace anyexperts {

// A trainable matrix together with its gradient accumulator.
struct Parameter {
  Parameter() = default;
  Parameter(std::string name, Matrix value)
      : name(std::move(name)), value(std::move(value)), grad(this->value.rows(), this->value.cols()) {}

  void zero_grad() const { grad.fill(0.0); }

  std::string name;
  Matrix value;
  // Accumulator written by Tape::backward; not part of the parameter's value.
  mutable Matrix grad;
};

// Non-owning, ordered view over a model's parameters.
using ParameterList = std::vector<Parameter*>;

void zero_grads(const ParameterList& params);
std::size_t parameter_count(const ParameterList& params);

class Tape;

// Handle to a node recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  const Matrix& grad() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  // Value of a 1×1 node.
  double scalar() const;

  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Reverse-mode recording of primitive operations. Nodes are appended in
// evaluation order and replayed strictly backwards. Confined to one thread.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  Var parameter(const Parameter& param);

  // Appends a node computed from `inputs`. `backward` is called with the node
  // id once its gradient is known and must accumulate into input gradients.
  // Throws NumericError if `value` holds NaN/Inf.
  Var record(Matrix value, std::vector<std::size_t> inputs, BackwardFn backward);

  // Seeds d(loss)/d(loss) = 1 and propagates to every node, then adds each
  // parameter leaf's gradient into its Parameter::grad.
  void backward(Var loss);

  const Matrix& value(std::size_t id) const { return nodes_[id].value; }
  // Gradient slot of a node, allocated (zero) on first access.
  Matrix& grad(std::size_t id);
  const Matrix& grad(std::size_t id) const;
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  std::size_t size() const { return nodes_.size(); }
  // Parameters bound on this tape, in binding order.
  const std::vector<const Parameter*>& parameters() const { return params_; }
  // Node ids visited by the most recent backward, in visit order.
  const std::vector<std::size_t>& last_backward_order() const { return visit_order_; }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    const Parameter* param = nullptr;
    bool requires_grad = false;
  };

  std::vector<Node> nodes_;
  std::vector<const Parameter*> params_;
  std::vector<std::size_t> visit_order_;
};

}  // namespace anyexperts

#endif  // ANYEXPERTS_TAPE_HPP_
