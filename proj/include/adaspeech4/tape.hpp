// Copyright (c) 2026 The adaspeech4-desk Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//   http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "adaspeech4/parameters.hpp"
#include "adaspeech4/tensor.hpp"

namespace adaspeech4 {

class Tape;

/// Handle to a value recorded on a Tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  inline const Tensor& value() const;
  inline const Shape& shape() const;
  inline std::size_t rows() const;
  inline std::size_t cols() const;

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

using Inputs = std::vector<const Tensor*>;
using InputGrads = std::vector<Tensor*>;
using ForwardFn = std::function<Tensor(const Inputs&)>;
// Accumulates into the non-null input gradients.
using BackwardFn =
    std::function<void(const Inputs& in, const Tensor& out, const Tensor& gout, InputGrads& gin)>;

/// Records primitive applications in evaluation order and runs reverse-mode
/// accumulation over them. One tape is used by one thread.
class Tape {
 public:
  Tape() = default;
  explicit Tape(const ParameterStore* params) : params_(params) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  const ParameterStore* params() const { return params_; }

  /// A leaf that never receives gradient.
  Var constant(Tensor value) { return leaf(std::move(value), false, {}); }

  /// A leaf that receives gradient but is not a named parameter.
  Var variable(Tensor value) { return leaf(std::move(value), true, {}); }

  /// The named parameter. Frozen parameters enter as constants.
  Var param(const std::string& name) {
    if (auto it = param_ids_.find(name); it != param_ids_.end()) return Var(this, it->second);
    if (!params_) throw ConfigError("tape has no parameter store for '" + name + "'");
    const bool trainable = params_->trainable(name);
    Var v = leaf(params_->get(name), trainable, trainable ? name : std::string{});
    param_ids_.emplace(name, v.id());
    return v;
  }

  Var record(const std::vector<Var>& inputs, ForwardFn forward, BackwardFn backward) {
    Node node;
    node.inputs.reserve(inputs.size());
    Inputs in;
    in.reserve(inputs.size());
    for (const Var& v : inputs) {
      if (v.tape() != this) throw Error("variable recorded on a different tape");
      node.inputs.push_back(v.id());
      node.requires_grad = node.requires_grad || nodes_[v.id()].requires_grad;
      in.push_back(&nodes_[v.id()].value);
    }
    node.value = forward(in);
    node.forward = std::move(forward);
    node.backward = std::move(backward);
    nodes_.push_back(std::move(node));
    return Var(this, nodes_.size() - 1);
  }

  const Tensor& value(Var v) const { return nodes_.at(v.id()).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id()).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Reverse sweep from a single-element loss.
  void backward(Var loss) {
    if (value(loss).size() != 1) {
      throw DimensionError("backward needs a scalar loss, got " +
                           shape_string(value(loss).shape()));
    }
    for (auto& n : nodes_) n.grad = Tensor();
    nodes_[loss.id()].grad = Tensor(nodes_[loss.id()].value.shape(), 1.0);
    for (std::size_t k = loss.id() + 1; k-- > 0;) {
      Node& node = nodes_[k];
      if (!node.requires_grad || node.grad.empty() || !node.backward) continue;
      Inputs in;
      InputGrads gin;
      in.reserve(node.inputs.size());
      gin.reserve(node.inputs.size());
      for (std::size_t id : node.inputs) {
        Node& src = nodes_[id];
        in.push_back(&src.value);
        if (src.requires_grad) {
          if (src.grad.empty()) src.grad = Tensor(src.value.shape(), 0.0);
          gin.push_back(&src.grad);
        } else {
          gin.push_back(nullptr);
        }
      }
      node.backward(in, node.value, node.grad, gin);
    }
  }

  /// Gradient of the last backward() w.r.t. v (zeros if v was unreachable).
  Tensor grad(Var v) const {
    const Node& n = nodes_.at(v.id());
    return n.grad.empty() ? Tensor(n.value.shape(), 0.0) : n.grad;
  }

  /// Gradients for every trainable tensor of the store; unused ones are zero.
  std::map<std::string, Tensor> gradients() const {
    std::map<std::string, Tensor> out;
    if (!params_) return out;
    for (const auto& name : params_->trainable_names()) {
      auto it = param_ids_.find(name);
      out.emplace(name, it == param_ids_.end() ? Tensor(params_->get(name).shape(), 0.0)
                                               : grad(Var(const_cast<Tape*>(this), it->second)));
    }
    return out;
  }

  /// Re-evaluates every recorded primitive from the stored leaves and
  /// returns the recomputed value of `v`. Recorded values are untouched.
  Tensor replay(Var v) const {
    std::vector<Tensor> values(v.id() + 1);
    for (std::size_t k = 0; k <= v.id(); ++k) {
      const Node& node = nodes_[k];
      if (!node.forward) {
        values[k] = node.value;
        continue;
      }
      Inputs in;
      in.reserve(node.inputs.size());
      for (std::size_t id : node.inputs) in.push_back(&values[id]);
      values[k] = node.forward(in);
    }
    return values[v.id()];
  }

 private:
  struct Node {
    std::vector<std::size_t> inputs;
    Tensor value;
    Tensor grad;
    ForwardFn forward;
    BackwardFn backward;
    std::string param;
    bool requires_grad = false;
  };

  Var leaf(Tensor value, bool requires_grad, std::string param) {
    Node node;
    node.value = std::move(value);
    node.requires_grad = requires_grad;
    node.param = std::move(param);
    nodes_.push_back(std::move(node));
    return Var(this, nodes_.size() - 1);
  }

  const ParameterStore* params_ = nullptr;
  std::vector<Node> nodes_;
  std::unordered_map<std::string, std::size_t> param_ids_;
};

inline const Tensor& Var::value() const { return tape_->value(*this); }
inline const Shape& Var::shape() const { return value().shape(); }
inline std::size_t Var::rows() const { return value().rows(); }
inline std::size_t Var::cols() const { return value().cols(); }

}  // namespace adaspeech4
