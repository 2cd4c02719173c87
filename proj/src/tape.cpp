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

#include "anyexperts/tape.hpp"

#include <fmt/format.h>

#include "anyexperts/errors.hpp"

namespace anyexperts {

void zero_grads(const ParameterList& params) {
  for (Parameter* p : params) p->zero_grad();
}

std::size_t parameter_count(const ParameterList& params) {
  std::size_t n = 0;
  for (const Parameter* p : params) n += p->value.size();
  return n;
}

const Matrix& Var::value() const { return tape_->value(id_); }

const Matrix& Var::grad() const { return tape_->grad(id_); }

double Var::scalar() const {
  const Matrix& v = value();
  if (v.rows() != 1 || v.cols() != 1) {
    throw ContractError(fmt::format("scalar() on a {} node", v.shape_string()));
  }
  return v[0];
}

Var Tape::constant(Matrix value) { return record(std::move(value), {}, nullptr); }

Var Tape::parameter(const Parameter& param) {
  Var v = record(param.value, {}, nullptr);
  nodes_[v.id_].param = &param;
  nodes_[v.id_].requires_grad = true;
  params_.push_back(&param);
  return v;
}

Var Tape::record(Matrix value, std::vector<std::size_t> inputs, BackwardFn backward) {
  if (!value.all_finite()) {
    throw NumericError(fmt::format("non-finite value produced at tape node {}", nodes_.size()));
  }
  Node node;
  node.value = std::move(value);
  for (std::size_t in : inputs) {
    if (in >= nodes_.size()) throw InvariantError("tape input refers to a future node");
    node.requires_grad = node.requires_grad || nodes_[in].requires_grad;
  }
  node.inputs = std::move(inputs);
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Matrix& Tape::grad(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.size() != n.value.size()) n.grad = Matrix(n.value.rows(), n.value.cols());
  return n.grad;
}

const Matrix& Tape::grad(std::size_t id) const {
  const Node& n = nodes_[id];
  if (n.grad.size() != n.value.size()) {
    throw ContractError(fmt::format("node {} has no gradient", id));
  }
  return n.grad;
}

void Tape::backward(Var loss) {
  if (loss.tape_ != this) throw ContractError("loss was recorded on a different tape");
  const Matrix& lv = value(loss.id_);
  if (lv.rows() != 1 || lv.cols() != 1) {
    throw ContractError(fmt::format("backward needs a scalar loss, got {}", lv.shape_string()));
  }
  for (Node& n : nodes_) n.grad = Matrix();
  visit_order_.clear();
  grad(loss.id_)[0] = 1.0;
  for (std::size_t id = loss.id_ + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.requires_grad || n.grad.empty()) continue;
    visit_order_.push_back(id);
    if (n.param != nullptr) {
      Matrix& acc = n.param->grad;
      if (acc.size() != n.grad.size()) {
        throw InvariantError(fmt::format("gradient accumulator for '{}' has the wrong shape",
                                         n.param->name));
      }
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += n.grad[i];
    } else if (n.backward) {
      n.backward(*this, id);
    }
  }
}

}  // namespace anyexperts
