// Copyright 2026 The csifb Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "csifb/kernels.hpp"
#include "csifb/tensor.hpp"

namespace csifb {

struct Var {
  static constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();
  std::size_t id = kNone;
};

/// Gradients of a loss with respect to the parameter slots registered on a tape.
class Gradients {
 public:
  Gradients() = default;
  explicit Gradients(std::vector<Tensor> by_slot, std::vector<bool> registered)
      : by_slot_(std::move(by_slot)), registered_(std::move(registered)) {}

  bool has(std::size_t slot) const { return slot < registered_.size() && registered_[slot]; }

  const Tensor& at(std::size_t slot) const {
    if (!has(slot)) {
      throw TapeError("gradient requested for parameter slot " + std::to_string(slot) +
                      " that was never recorded on the tape");
    }
    return by_slot_[slot];
  }

  Tensor& at(std::size_t slot) { return const_cast<Tensor&>(std::as_const(*this).at(slot)); }

  std::size_t slot_count() const { return by_slot_.size(); }

 private:
  std::vector<Tensor> by_slot_;
  std::vector<bool> registered_;
};

/// Record of primitive operations for one forward pass. backward() replays the
/// records in exact reverse order. Single-threaded; rebuild per step.
class GradTape {
 public:
  using Backward = std::function<void(GradTape&, const Tensor& grad_out)>;

  Var constant(Tensor value) { return push(std::move(value), {}, false, Var::kNone); }

  Var parameter(std::size_t slot, Tensor value) {
    for (const auto& n : nodes_) {
      if (n.slot == slot) {
        throw TapeError("parameter slot " + std::to_string(slot) + " registered twice");
      }
    }
    return push(std::move(value), {}, true, slot);
  }

  Var record(Tensor value, std::initializer_list<Var> inputs, Backward backward) {
    return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                  std::move(backward));
  }

  Var record(Tensor value, std::span<const Var> inputs, Backward backward) {
    bool needs = false;
    for (Var v : inputs) needs = needs || requires_grad(v);
    return push(std::move(value), needs ? std::move(backward) : Backward{}, needs, Var::kNone);
  }

  const Tensor& value(Var v) const { return node(v).value; }

  double scalar(Var v) const {
    const Tensor& t = value(v);
    if (t.size() != 1) throw TapeError("scalar() on tensor of shape " + shape_string(t.shape()));
    return t[0];
  }

  bool requires_grad(Var v) const { return node(v).requires_grad; }

  // Adds `grad` into the gradient slot of `v`. No-op for constants.
  void accumulate(Var v, const Tensor& grad) {
    Node& n = node(v);
    if (!n.requires_grad) return;
    n.value.require_same_shape(grad, "gradient accumulation");
    if (grads_[v.id].empty()) {
      grads_[v.id] = grad;
    } else {
      grads_[v.id] += grad;
    }
  }

  void accumulate(Var v, Tensor&& grad) {
    Node& n = node(v);
    if (!n.requires_grad) return;
    n.value.require_same_shape(grad, "gradient accumulation");
    if (grads_[v.id].empty()) {
      grads_[v.id] = std::move(grad);
    } else {
      grads_[v.id] += grad;
    }
  }

  Gradients backward(Var loss) {
    if (value(loss).size() != 1) throw TapeError("backward() needs a scalar loss");
    for (auto& g : grads_) g = Tensor();
    grads_[loss.id] = Tensor(value(loss).shape(), 1.0);
    for (std::size_t i = nodes_.size(); i-- > 0;) {
      if (grads_[i].empty() || !nodes_[i].backward) continue;
      nodes_[i].backward(*this, grads_[i]);
    }
    std::size_t slots = 0;
    for (const auto& n : nodes_) {
      if (n.slot != Var::kNone) slots = std::max(slots, n.slot + 1);
    }
    std::vector<Tensor> by_slot(slots);
    std::vector<bool> registered(slots, false);
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      const Node& n = nodes_[i];
      if (n.slot == Var::kNone) continue;
      registered[n.slot] = true;
      by_slot[n.slot] = grads_[i].empty() ? Tensor(n.value.shape()) : grads_[i];
    }
    return Gradients(std::move(by_slot), std::move(registered));
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Backward backward;
    bool requires_grad = false;
    std::size_t slot = Var::kNone;
  };

  Var push(Tensor value, Backward backward, bool requires_grad, std::size_t slot) {
    nodes_.push_back(Node{std::move(value), std::move(backward), requires_grad, slot});
    grads_.emplace_back();
    return Var{nodes_.size() - 1};
  }

  Node& node(Var v) {
    if (v.id >= nodes_.size()) throw TapeError("variable is not recorded on this tape");
    return nodes_[v.id];
  }
  const Node& node(Var v) const {
    if (v.id >= nodes_.size()) throw TapeError("variable is not recorded on this tape");
    return nodes_[v.id];
  }

  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
};

// Differentiable primitives recorded on a GradTape.
namespace ops {

inline Var conv2d(GradTape& tape, Var x, Var weight, Var bias) {
  Tensor y = kernels::conv2d(tape.value(x), tape.value(weight), &tape.value(bias));
  return tape.record(std::move(y), {x, weight, bias}, [=](GradTape& t, const Tensor& g) {
    auto grads = kernels::conv2d_backward(t.value(x), t.value(weight), g, t.requires_grad(x));
    if (t.requires_grad(x)) t.accumulate(x, std::move(grads.input));
    t.accumulate(weight, std::move(grads.weight));
    t.accumulate(bias, std::move(grads.bias));
  });
}

inline Var relu(GradTape& tape, Var x) {
  return tape.record(kernels::relu(tape.value(x)), {x}, [=](GradTape& t, const Tensor& g) {
    t.accumulate(x, kernels::relu_backward(t.value(x), g));
  });
}

inline Var maxpool2(GradTape& tape, Var x) {
  auto pooled = kernels::maxpool2d(tape.value(x), 2);
  auto argmax = std::move(pooled.argmax);
  return tape.record(std::move(pooled.output), {x},
                     [=, argmax = std::move(argmax)](GradTape& t, const Tensor& g) {
                       t.accumulate(x, kernels::maxpool2d_backward(t.value(x).shape(), argmax, g));
                     });
}

inline Var upsample2(GradTape& tape, Var x) {
  return tape.record(kernels::upsample_nearest2d(tape.value(x), 2), {x},
                     [=](GradTape& t, const Tensor& g) {
                       t.accumulate(x, kernels::upsample_nearest2d_backward(g, 2));
                     });
}

inline Var add(GradTape& tape, Var a, Var b) {
  Tensor y = tape.value(a) + tape.value(b);
  return tape.record(std::move(y), {a, b}, [=](GradTape& t, const Tensor& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

inline Var add_constant(GradTape& tape, Var a, const Tensor& c) {
  Tensor y = tape.value(a) + c;
  return tape.record(std::move(y), {a}, [=](GradTape& t, const Tensor& g) { t.accumulate(a, g); });
}

inline Var mul(GradTape& tape, Var a, Var b) {
  const Tensor& av = tape.value(a);
  const Tensor& bv = tape.value(b);
  av.require_same_shape(bv, "mul");
  Tensor y(av.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] * bv[i];
  return tape.record(std::move(y), {a, b}, [=](GradTape& t, const Tensor& g) {
    const Tensor& av2 = t.value(a);
    const Tensor& bv2 = t.value(b);
    Tensor ga(g.shape()), gb(g.shape());
    for (std::size_t i = 0; i < g.size(); ++i) {
      ga[i] = g[i] * bv2[i];
      gb[i] = g[i] * av2[i];
    }
    t.accumulate(a, std::move(ga));
    t.accumulate(b, std::move(gb));
  });
}

inline Var scale(GradTape& tape, Var a, double s) {
  return tape.record(tape.value(a) * s, {a},
                     [=](GradTape& t, const Tensor& g) { t.accumulate(a, g * s); });
}

// Sum of all elements -> scalar.
inline Var sum(GradTape& tape, Var a) {
  return tape.record(Tensor::scalar(tape.value(a).sum()), {a}, [=](GradTape& t, const Tensor& g) {
    t.accumulate(a, Tensor(t.value(a).shape(), g[0]));
  });
}

// ||a - target||^2 -> scalar.
inline Var squared_error(GradTape& tape, Var a, const Tensor& target) {
  const Tensor diff = tape.value(a) - target;
  return tape.record(Tensor::scalar(diff.squared_norm()), {a},
                     [=](GradTape& t, const Tensor& g) {
                       Tensor ga = t.value(a) - target;
                       ga *= 2.0 * g[0];
                       t.accumulate(a, std::move(ga));
                     });
}

// Sum of same-shaped terms.
inline Var add_all(GradTape& tape, const std::vector<Var>& terms) {
  if (terms.empty()) throw TapeError("add_all() of no terms");
  Tensor y = tape.value(terms.front());
  for (std::size_t i = 1; i < terms.size(); ++i) y += tape.value(terms[i]);
  return tape.record(std::move(y), std::span<const Var>(terms), [terms](GradTape& t, const Tensor& g) {
    for (Var v : terms) t.accumulate(v, g);
  });
}

}  // namespace ops
}  // namespace csifb
