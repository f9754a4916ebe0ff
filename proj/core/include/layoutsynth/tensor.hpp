#pragma once

#include <concepts>
#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace layoutsynth {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

// Raised for shape/rank disagreements between operands.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Raised when a caller violates an operation precondition.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Raised when an operation produces NaN or Inf from finite inputs. The message
// names the producing operation.
class NumericError : public std::runtime_error {
 public:
  NumericError(std::string op, const std::string& what)
      : std::runtime_error(what), op_(std::move(op)) {}
  const std::string& op() const { return op_; }

 private:
  std::string op_;
};

// Raised for invalid or inconsistent configuration values.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace detail {

template <std::floating_point T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;
  bool requires_grad = false;
  bool leaf = true;

  std::span<T> grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad;
  }
};

}  // namespace detail

// Dense row-major tensor with shared storage. Copies alias the same node, the
// way parameters and activations are passed around in the networks; use
// clone() for a deep copy and detach() to cut the gradient path.
template <std::floating_point T>
class Tensor {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<detail::Node<T>>;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0));
  Tensor(Shape shape, std::vector<T> data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), T(0)); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), T(1)); }
  static Tensor scalar(T v) { return Tensor(Shape{1}, v); }
  static Tensor from_node(NodePtr node) {
    Tensor t;
    t.node_ = std::move(node);
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t numel() const { return node_->data.size(); }

  std::span<const T> data() const { return node_->data; }
  // In-place access for optimizers and initializers. Never use on a tensor
  // that a recorded operation still depends on.
  std::span<T> mutable_data() { return node_->data; }
  T item() const;
  T operator[](std::size_t i) const { return node_->data[i]; }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  Tensor& set_requires_grad(bool on = true);
  bool is_leaf() const { return node_->leaf; }

  bool has_grad() const { return !node_->grad.empty(); }
  // Gradient accumulated by backward(); all zeros if none reached this tensor.
  std::vector<T> grad() const;
  void zero_grad() { node_->grad.clear(); }

  Tensor detach() const;
  Tensor clone() const;

  const NodePtr& node() const { return node_; }

 private:
  NodePtr node_;
};

// Ordered record of executed differentiable operations. backward() replays the
// record in exact reverse execution order.
template <std::floating_point T>
class Tape {
 public:
  using BackwardFn = std::function<void(std::span<const T>)>;

  struct Entry {
    std::string_view op;
    std::shared_ptr<detail::Node<T>> output;
    BackwardFn backward;
  };

  // The tape operations record onto in the current thread.
  static Tape& active();

  void record(std::string_view op, std::shared_ptr<detail::Node<T>> output,
              BackwardFn fn);
  std::size_t size() const { return entries_.size(); }
  const std::vector<Entry>& entries() const { return entries_; }
  void clear() { entries_.clear(); }

 private:
  std::vector<Entry> entries_;
};

// Makes `tape` the active tape for this thread until destruction.
template <std::floating_point T>
class TapeScope {
 public:
  explicit TapeScope(Tape<T>& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<T>* previous_;
};

// Disables recording for the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

  static bool enabled();

 private:
  bool previous_;
};

struct BackwardOptions {
  // Keep the tape so the same graph can be differentiated again. Leaf
  // gradients accumulate across passes; intermediate gradients are reset.
  bool retain_tape = false;
  // When set, receives the op name of every visited entry in visit order.
  std::vector<std::string>* visited = nullptr;
};

// Reverse-mode pass over the active tape seeded with d(loss)/d(loss) = 1.
// Leaf gradients accumulate until zero_grad(). Throws ContractError for a
// non-scalar loss.
template <std::floating_point T>
void backward(const Tensor<T>& loss, BackwardOptions options = {});

template <std::floating_point T>
void backward(Tape<T>& tape, const Tensor<T>& loss,
              BackwardOptions options = {});

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template class Tape<float>;
extern template class Tape<double>;
extern template class TapeScope<float>;
extern template class TapeScope<double>;

}  // namespace layoutsynth
