#pragma once

// Dense double-precision tensors with reverse-mode automatic differentiation.
//
// A Tensor is a cheap handle onto shared storage. Operations on tracked
// tensors (requires_grad) record a GradNode on their result; backward() sorts
// the recorded graph topologically and replays it in reverse, accumulating
// gradients into every tracked leaf. A graph is consumed by its backward pass.

#include <algorithm>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace irismatch {

using Shape = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class AutogradError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace detail {

struct TensorImpl;

struct GradNode {
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  std::function<void(const TensorImpl& out)> backward;
  bool consumed = false;
};

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until a gradient reaches this tensor
  bool requires_grad = false;
  std::shared_ptr<GradNode> node;  // null for leaves

  std::span<double> ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

/// Gradient buffer of a tracked input, or an empty span when the input does
/// not participate in differentiation.
inline std::span<double> grad_sink(const std::shared_ptr<TensorImpl>& t) {
  if (!t || !t->requires_grad) return {};
  return t->ensure_grad();
}

}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode(); }

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false)
      : impl_(std::make_shared<detail::TensorImpl>()) {
    if (shape_numel(shape) != values.size()) {
      throw ShapeError("Tensor: shape " + shape_string(shape) + " holds " +
                       std::to_string(shape_numel(shape)) + " values, got " +
                       std::to_string(values.size()));
    }
    impl_->shape = std::move(shape);
    impl_->data = std::move(values);
    impl_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return full(std::move(shape), 0.0, requires_grad);
  }

  static Tensor full(Shape shape, double value, bool requires_grad = false) {
    const std::size_t n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
  }

  static Tensor scalar(double value, bool requires_grad = false) {
    return Tensor({1}, {value}, requires_grad);
  }

  bool defined() const noexcept { return static_cast<bool>(impl_); }

  const Shape& shape() const { return checked().shape; }
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const {
    const Shape& s = shape();
    if (axis >= s.size()) throw ShapeError("Tensor::dim: axis out of range");
    return s[axis];
  }
  std::size_t numel() const { return checked().data.size(); }

  std::span<const double> data() const { return checked().data; }

  /// Writable storage; only leaves may be mutated (parameter updates, loading).
  std::span<double> mutable_data() {
    if (!is_leaf()) throw AutogradError("mutable_data: tensor is produced by a recorded op");
    return checked().data;
  }

  double item() const {
    if (numel() != 1) throw ShapeError("item: tensor has " + std::to_string(numel()) + " values");
    return checked().data[0];
  }

  bool requires_grad() const { return checked().requires_grad; }

  Tensor& set_requires_grad(bool flag) {
    if (!is_leaf()) throw AutogradError("set_requires_grad: only leaves can be toggled");
    checked().requires_grad = flag;
    return *this;
  }

  bool is_leaf() const { return !checked().node; }

  bool has_grad() const { return checked().grad.size() == checked().data.size(); }

  std::span<const double> grad() const {
    if (!has_grad()) throw AutogradError("grad: no gradient has been accumulated");
    return checked().grad;
  }

  void zero_grad() {
    auto& g = checked().grad;
    std::fill(g.begin(), g.end(), 0.0);
  }

  /// Deep copy as a fresh leaf with the same tracking flag.
  Tensor clone() const { return Tensor(shape(), checked().data, requires_grad()); }

  /// Deep copy as an untracked leaf.
  Tensor detach() const { return Tensor(shape(), checked().data, false); }

  const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }

 private:
  detail::TensorImpl& checked() const {
    if (!impl_) throw AutogradError("use of an undefined tensor");
    return *impl_;
  }

  std::shared_ptr<detail::TensorImpl> impl_;
};

namespace detail {

/// Builds an op result. The backward closure is attached only when recording
/// is enabled and some input is tracked; otherwise the result is a constant.
inline Tensor make_result(Shape shape, std::vector<double> values,
                          std::initializer_list<Tensor> inputs,
                          std::function<void(const TensorImpl&)> backward) {
  Tensor out(std::move(shape), std::move(values));
  if (!grad_mode()) return out;
  bool tracked = false;
  for (const Tensor& t : inputs) tracked = tracked || (t.defined() && t.requires_grad());
  if (!tracked) return out;
  auto node = std::make_shared<GradNode>();
  for (const Tensor& t : inputs) {
    if (t.defined() && t.requires_grad()) node->inputs.push_back(t.impl());
  }
  node->backward = std::move(backward);
  out.impl()->requires_grad = true;
  out.impl()->node = std::move(node);
  return out;
}

inline Tensor make_result(Shape shape, std::vector<double> values,
                          const std::vector<Tensor>& inputs,
                          std::function<void(const TensorImpl&)> backward) {
  Tensor out(std::move(shape), std::move(values));
  if (!grad_mode()) return out;
  auto node = std::make_shared<GradNode>();
  for (const Tensor& t : inputs) {
    if (t.defined() && t.requires_grad()) node->inputs.push_back(t.impl());
  }
  if (node->inputs.empty()) return out;
  node->backward = std::move(backward);
  out.impl()->requires_grad = true;
  out.impl()->node = std::move(node);
  return out;
}

/// Operations reachable from a root, in topological order (inputs first).
class GradTape {
 public:
  explicit GradTape(const std::shared_ptr<TensorImpl>& root) {
    std::unordered_set<const TensorImpl*> visited;
    std::vector<std::pair<std::shared_ptr<TensorImpl>, std::size_t>> stack;
    stack.emplace_back(root, 0);
    visited.insert(root.get());
    while (!stack.empty()) {
      auto& [tensor, next] = stack.back();
      const std::size_t fan_in = tensor->node ? tensor->node->inputs.size() : 0;
      if (next < fan_in) {
        std::shared_ptr<TensorImpl> child = tensor->node->inputs[next++];
        if (child->requires_grad && visited.insert(child.get()).second) stack.emplace_back(child, 0);
      } else {
        order_.push_back(tensor);
        stack.pop_back();
      }
    }
  }

  /// Runs every recorded backward closure in reverse order, once.
  void replay() {
    for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
      TensorImpl* t = it->get();
      if (!t->node) {
        t->ensure_grad();  // tracked leaf: always populated, even if untouched
        continue;
      }
      t->ensure_grad();
      t->node->backward(*t);
      t->node->backward = nullptr;
      t->node->inputs.clear();
      t->node->consumed = true;
      t->grad.clear();
      t->grad.shrink_to_fit();
    }
  }

 private:
  // Owning, so releasing a consumed node cannot free a tensor still queued.
  std::vector<std::shared_ptr<TensorImpl>> order_;
};

}  // namespace detail

/// Accumulates d(loss)/d(leaf) into every tracked leaf reachable from loss.
inline void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw AutogradError("backward: loss must be a scalar tensor");
  }
  const auto& root = loss.impl();
  if (!root->requires_grad) {
    throw AutogradError("backward: loss is detached from every tracked tensor");
  }
  if (root->node && root->node->consumed) {
    throw AutogradError("backward: graph already consumed by a previous backward call");
  }
  detail::GradTape tape(root);
  root->ensure_grad();
  if (root->node) {
    root->grad[0] = 1.0;
  } else {
    root->grad[0] += 1.0;
  }
  tape.replay();
  if (root->node) {
    // Keep the consumed marker reachable from the loss handle.
    root->node->consumed = true;
  }
}

}  // namespace irismatch
