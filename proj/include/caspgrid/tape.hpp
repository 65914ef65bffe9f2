#pragma once

#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "caspgrid/tensor.hpp"

namespace caspgrid {

/// One value in a differentiable computation. `grad` is allocated lazily on
/// first accumulation, so inference graphs never pay for gradient storage.
template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;

  void ensure_grad() {
    if (grad.numel() != value.numel()) grad = Tensor<T>(value.dims());
  }
  bool has_grad() const { return grad.numel() == value.numel() && grad.numel() > 0; }
};

template <typename T>
using Var = std::shared_ptr<Node<T>>;

/// Ordered record of executed differentiable operations. Each op pushes one
/// closure during forward; backward() replays them in exact reverse order.
template <typename T>
class Tape {
 public:
  explicit Tape(bool recording = true) : recording_(recording) {}

  bool recording() const { return recording_; }

  Var<T> leaf(Tensor<T> value, bool requires_grad = false) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->requires_grad = requires_grad && recording_;
    return n;
  }

  void record(std::function<void()> backward_step) {
    if (recording_) steps_.push_back(std::move(backward_step));
  }

  size_t size() const { return steps_.size(); }

  /// Seeds d(root)/d(root) = 1 and propagates through every recorded step in
  /// reverse execution order. `root` must be scalar-shaped.
  void backward(const Var<T>& root) {
    if (!recording_)
      throw_error(ErrorKind::Config, "backward on a non-recording tape");
    if (root->value.numel() != 1)
      throw_error(ErrorKind::Shape, "backward root must be a scalar");
    root->ensure_grad();
    root->grad[0] = T(1);
    for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
  }

  void clear() { steps_.clear(); }

 private:
  bool recording_;
  std::vector<std::function<void()>> steps_;
};

/// True when any input needs a gradient; used by ops to decide whether the
/// output participates in backward at all.
template <typename T>
inline bool any_requires_grad(std::initializer_list<const Var<T>*> vars) {
  for (const Var<T>* v : vars)
    if (*v && (*v)->requires_grad) return true;
  return false;
}

}  // namespace caspgrid
