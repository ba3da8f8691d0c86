#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "icanet/tensor.hpp"

namespace icanet {

template <Real T>
class Tape;

/// Handle to a value recorded on a Tape.
template <Real T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  [[nodiscard]] const Tensor<T>& value() const { return tape->value(*this); }
  [[nodiscard]] const Shape& shape() const { return value().shape(); }
};

/// Single-use record of one forward pass.
///
/// Nodes are appended in execution order, so the node list is already a
/// topological order and backward is a reverse sweep. Leaves created with
/// parameter() are bound to an external Tensor whose grad buffer receives the
/// accumulated gradient when backward() runs; gradients add onto whatever the
/// buffer already holds.
template <Real T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::span<const T> grad_out, const Tensor<T>& out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Tensor<T> value) {
    Node node;
    node.value = std::move(value);
    node.value.set_requires_grad(false);
    return push(std::move(node));
  }

  /// Binds a parameter. Tensors without requires_grad are recorded as constants.
  Var<T> parameter(Tensor<T>& p) {
    Node node;
    node.value = p;
    node.value.set_requires_grad(false);
    if (p.requires_grad()) {
      node.needs_grad = true;
      node.bound = &p;
    }
    return push(std::move(node));
  }

  Var<T> record(Tensor<T> out, std::vector<std::size_t> inputs, BackwardFn fn) {
    check_open();
    Node node;
    node.value = std::move(out);
    for (auto in : inputs) node.needs_grad = node.needs_grad || nodes_.at(in).needs_grad;
    node.inputs = std::move(inputs);
    if (node.needs_grad) node.backward = std::move(fn);
    return push(std::move(node));
  }

  [[nodiscard]] const Tensor<T>& value(Var<T> v) const { return nodes_.at(v.id).value; }
  [[nodiscard]] bool needs_grad(std::size_t id) const { return nodes_.at(id).needs_grad; }
  [[nodiscard]] std::size_t size() const { return nodes_.size(); }
  [[nodiscard]] bool consumed() const { return consumed_; }

  /// Gradient buffer of a node, allocated on first use. Only valid during backward.
  std::span<T> grad_of(std::size_t id) {
    auto& node = nodes_.at(id);
    if (node.grad.empty()) node.grad.assign(node.value.numel(), T(0));
    return node.grad;
  }

  void backward(Var<T> loss) {
    check_open();
    if (loss.tape != this) throw Error("Tape::backward: loss belongs to another tape");
    const auto& lv = nodes_.at(loss.id).value;
    if (lv.numel() != 1) throw ShapeError("Tape::backward: loss must be a scalar, got " + lv.shape().str());
    lv.require_finite("Tape::backward");
    consumed_ = true;
    if (!nodes_[loss.id].needs_grad) return;
    grad_of(loss.id)[0] = T(1);
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      auto& node = nodes_[i];
      if (!node.needs_grad || node.grad.empty()) continue;
      if (node.backward) {
        node.backward(*this, node.grad, node.value);
      }
      if (nodes_[i].bound != nullptr) {
        auto dst = nodes_[i].bound->grad();
        const auto& g = nodes_[i].grad;
        for (std::size_t k = 0; k < g.size(); ++k) dst[k] += g[k];
      }
      // Intermediate gradients are no longer needed once propagated.
      std::vector<T>().swap(nodes_[i].grad);
    }
  }

  /// Folds the activation pattern of a piecewise-linear op into a signature
  /// so that finite-difference probes can detect when they straddle a kink.
  void note_kinks(std::span<const T> pre) {
    for (T v : pre) {
      kink_hash_ ^= static_cast<std::uint64_t>(v > T(0));
      kink_hash_ *= 1099511628211ULL;
    }
  }
  [[nodiscard]] std::uint64_t kink_signature() const { return kink_hash_; }

 private:
  struct Node {
    Tensor<T> value;
    std::vector<T> grad;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    Tensor<T>* bound = nullptr;
    bool needs_grad = false;
  };

  Var<T> push(Node node) {
    check_open();
    nodes_.push_back(std::move(node));
    return Var<T>{this, nodes_.size() - 1};
  }

  void check_open() const {
    if (consumed_) throw Error("Tape: already consumed by backward(); record a new forward pass");
  }

  // deque keeps node addresses stable, so backward closures may hold pointers to input values.
  std::deque<Node> nodes_;
  std::uint64_t kink_hash_ = 14695981039346656037ULL;
  bool consumed_ = false;
};

}  // namespace icanet
