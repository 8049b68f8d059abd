#pragma once

#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "dcm/tensor.hpp"

namespace dcm {

/// One value in the recorded computation. Results keep their parents alive, so
/// a graph lives exactly as long as the loss that roots it.
template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // allocated on first accumulation
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  /// Gradient buffer, zero-filled on first use.
  Tensor<T>& grad_ref() {
    if (grad.empty()) grad = Tensor<T>(value.shape());
    return grad;
  }
  /// Parent i when it takes part in differentiation, otherwise nullptr.
  Node* input(std::size_t i) const {
    Node* p = parents[i].get();
    return p->requires_grad ? p : nullptr;
  }
};

/// Shared handle to a Node. Copies alias the same value and gradient.
template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(Tensor<T> value, bool requires_grad = false)
      : node_(std::make_shared<Node<T>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Var parameter(Tensor<T> value) { return Var(std::move(value), true); }

  bool defined() const { return static_cast<bool>(node_); }
  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& value_mut() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t dim(std::size_t axis) const { return node_->value.dim(axis); }
  std::size_t size() const { return node_->value.size(); }
  bool requires_grad() const { return node_->requires_grad; }
  const char* op() const { return node_->op; }

  /// Accumulated gradient; zeros if nothing has flowed into this value.
  const Tensor<T>& grad() const { return node_->grad_ref(); }
  void zero_grad() {
    if (!node_->grad.empty()) node_->grad.fill(T{0});
  }

  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& shared() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// While alive on a thread, new results record no backward closures.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_recording_enabled();

/// Wraps an op result. The closure is kept only when a parent needs gradients.
/// Throws NumericError naming `op` if the value contains NaN or Inf.
template <typename T>
Var<T> record(const char* op, Tensor<T> value, std::vector<Var<T>> parents,
              std::function<void(Node<T>&)> backward_fn);

/// Reverse-mode sweep from a scalar loss into every reachable leaf gradient.
/// Throws std::logic_error when the loss has no recorded computation.
template <typename T>
void backward(const Var<T>& loss);

extern template Var<float> record(const char*, Tensor<float>, std::vector<Var<float>>,
                                  std::function<void(Node<float>&)>);
extern template Var<double> record(const char*, Tensor<double>, std::vector<Var<double>>,
                                   std::function<void(Node<double>&)>);
extern template void backward(const Var<float>&);
extern template void backward(const Var<double>&);

}  // namespace dcm
