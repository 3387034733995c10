// Copyright 2026 The avae Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "avae/errors.hpp"
#include "avae/tensor.hpp"

namespace avae {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid as long as the tape lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t size() const { return value().size(); }
  std::size_t id() const noexcept { return id_; }
  Tape* tape() const noexcept { return tape_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

using Inputs = std::span<const Tensor* const>;
using GradSlots = std::span<Tensor* const>;
using ForwardFn = std::function<Tensor(Inputs)>;
// Accumulates into every non-null slot; slots are pre-zeroed and shaped like the inputs.
using BackwardFn = std::function<void(const Tensor& grad_out, Inputs inputs, const Tensor& out,
                                      GradSlots grad_in)>;

/// Leaf gradients produced by Tape::backward.
class Gradients {
 public:
  const Tensor& operator[](Var leaf) const { return grads_.at(leaf.id()); }
  bool detached(Var leaf) const { return detached_.at(leaf.id()) != 0; }
  bool has_detached() const noexcept { return any_detached_; }

 private:
  friend class Tape;
  std::vector<Tensor> grads_;
  std::vector<char> detached_;
  bool any_detached_ = false;
};

/// Define-by-run record of primitive applications. Entries are appended in
/// evaluation order, so every entry's inputs precede it.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = true) {
    nodes_.push_back(Node{"leaf", {}, std::move(value), requires_grad, true, {}, {}});
    return Var(this, nodes_.size() - 1);
  }

  Var constant(Tensor value) { return leaf(std::move(value), false); }

  Var record(std::string_view op, const std::vector<Var>& inputs, ForwardFn forward,
             BackwardFn backward) {
    std::vector<std::size_t> ids;
    std::vector<const Tensor*> values;
    ids.reserve(inputs.size());
    values.reserve(inputs.size());
    bool requires_grad = false;
    for (const Var& v : inputs) {
      check_owned(v, op);
      ids.push_back(v.id());
      values.push_back(&nodes_[v.id()].value);
      requires_grad = requires_grad || nodes_[v.id()].requires_grad;
    }
    Tensor out = forward(values);
    nodes_.push_back(Node{std::string(op), std::move(ids), std::move(out), requires_grad, false,
                          std::move(forward), std::move(backward)});
    return Var(this, nodes_.size() - 1);
  }

  std::size_t size() const noexcept { return nodes_.size(); }
  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  std::string_view op(std::size_t id) const { return nodes_.at(id).op; }
  const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_.at(id).inputs; }
  bool requires_grad(Var v) const { return nodes_.at(v.id()).requires_grad; }

  /// Replaces the value of a leaf; call replay() to propagate.
  void assign(Var leaf, Tensor value) {
    check_owned(leaf, "assign");
    Node& node = nodes_[leaf.id()];
    if (!node.is_leaf) throw std::invalid_argument("assign: entry is not a leaf");
    if (node.value.shape() != value.shape()) {
      throw ShapeError("assign: leaf has shape " + to_string(node.value.shape()) + ", got " +
                       to_string(value.shape()));
    }
    node.value = std::move(value);
  }

  /// Re-evaluates every recorded primitive in order. Returns true when all
  /// recomputed values are bit-identical to the stored ones.
  bool replay() {
    bool identical = true;
    std::vector<const Tensor*> values;
    for (Node& node : nodes_) {
      if (node.is_leaf) continue;
      values.clear();
      for (std::size_t id : node.inputs) values.push_back(&nodes_[id].value);
      Tensor out = node.forward(values);
      identical = identical && out == node.value;
      node.value = std::move(out);
    }
    return identical;
  }

  /// Reverse sweep from a single-element output. Leaves that require a
  /// gradient but are not ancestors of the output get zeros and are flagged.
  Gradients backward(Var output) const {
    check_owned(output, "backward");
    if (nodes_[output.id()].value.size() != 1) {
      throw ShapeError("backward: output " + to_string(nodes_[output.id()].value.shape()) +
                       " is not a scalar");
    }
    std::vector<std::optional<Tensor>> adjoint(output.id() + 1);
    adjoint[output.id()] = Tensor(nodes_[output.id()].value.shape(), 1.0);

    std::vector<const Tensor*> values;
    std::vector<Tensor*> slots;
    for (std::size_t i = output.id() + 1; i-- > 0;) {
      const Node& node = nodes_[i];
      if (!adjoint[i] || node.is_leaf || !node.requires_grad) continue;
      values.clear();
      slots.clear();
      for (std::size_t id : node.inputs) {
        values.push_back(&nodes_[id].value);
        if (nodes_[id].requires_grad) {
          if (!adjoint[id]) adjoint[id] = Tensor(nodes_[id].value.shape());
          slots.push_back(&*adjoint[id]);
        } else {
          slots.push_back(nullptr);
        }
      }
      node.backward(*adjoint[i], values, node.value, slots);
      adjoint[i].reset();
    }

    Gradients result;
    result.grads_.resize(nodes_.size());
    result.detached_.assign(nodes_.size(), 0);
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      const Node& node = nodes_[i];
      if (!node.is_leaf || !node.requires_grad) continue;
      if (i < adjoint.size() && adjoint[i]) {
        result.grads_[i] = std::move(*adjoint[i]);
      } else {
        result.grads_[i] = Tensor(node.value.shape());
        result.detached_[i] = 1;
        result.any_detached_ = true;
      }
    }
    return result;
  }

 private:
  friend class Var;

  struct Node {
    std::string op;
    std::vector<std::size_t> inputs;
    Tensor value;
    bool requires_grad;
    bool is_leaf;
    ForwardFn forward;
    BackwardFn backward;
  };

  void check_owned(Var v, std::string_view op) const {
    if (v.tape_ != this || v.id_ >= nodes_.size()) {
      throw std::invalid_argument(std::string(op) + ": variable does not belong to this tape");
    }
  }

  // deque keeps references to stored values stable while entries are appended
  std::deque<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape_->nodes_.at(id_).value; }

}  // namespace avae
