#include "layoutsynth/tensor.hpp"

#include <sstream>

namespace layoutsynth {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <std::floating_point T>
Tensor<T>::Tensor(Shape shape, T fill) : node_(std::make_shared<detail::Node<T>>()) {
  node_->data.assign(layoutsynth::numel(shape), fill);
  node_->shape = std::move(shape);
}

template <std::floating_point T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data)
    : node_(std::make_shared<detail::Node<T>>()) {
  if (data.size() != layoutsynth::numel(shape)) {
    throw DimensionError("tensor data length " + std::to_string(data.size()) +
                         " does not match shape " + to_string(shape));
  }
  node_->shape = std::move(shape);
  node_->data = std::move(data);
}

template <std::floating_point T>
T Tensor<T>::item() const {
  if (numel() != 1) {
    throw ContractError("item() on tensor of shape " + to_string(shape()));
  }
  return node_->data[0];
}

template <std::floating_point T>
Tensor<T>& Tensor<T>::set_requires_grad(bool on) {
  node_->requires_grad = on;
  return *this;
}

template <std::floating_point T>
std::vector<T> Tensor<T>::grad() const {
  if (node_->grad.empty()) return std::vector<T>(node_->data.size(), T(0));
  return node_->grad;
}

template <std::floating_point T>
Tensor<T> Tensor<T>::detach() const {
  return Tensor(node_->shape, node_->data);
}

template <std::floating_point T>
Tensor<T> Tensor<T>::clone() const {
  Tensor t(node_->shape, node_->data);
  t.node_->requires_grad = node_->requires_grad;
  return t;
}

namespace {

thread_local bool g_grad_disabled = false;

template <std::floating_point T>
Tape<T>*& active_tape_slot() {
  thread_local Tape<T> default_tape;
  thread_local Tape<T>* slot = &default_tape;
  return slot;
}

}  // namespace

template <std::floating_point T>
Tape<T>& Tape<T>::active() {
  return *active_tape_slot<T>();
}

template <std::floating_point T>
void Tape<T>::record(std::string_view op,
                     std::shared_ptr<detail::Node<T>> output, BackwardFn fn) {
  entries_.push_back(Entry{op, std::move(output), std::move(fn)});
}

template <std::floating_point T>
TapeScope<T>::TapeScope(Tape<T>& tape) : previous_(active_tape_slot<T>()) {
  active_tape_slot<T>() = &tape;
}

template <std::floating_point T>
TapeScope<T>::~TapeScope() {
  active_tape_slot<T>() = previous_;
}

NoGradGuard::NoGradGuard() : previous_(g_grad_disabled) { g_grad_disabled = true; }
NoGradGuard::~NoGradGuard() { g_grad_disabled = previous_; }
bool NoGradGuard::enabled() { return g_grad_disabled; }

template <std::floating_point T>
void backward(Tape<T>& tape, const Tensor<T>& loss, BackwardOptions options) {
  if (loss.numel() != 1) {
    throw ContractError("backward() requires a scalar loss, got shape " +
                        to_string(loss.shape()));
  }
  auto& entries = tape.entries();
  if (options.retain_tape) {
    for (const auto& e : entries) e.output->grad.clear();
  }
  loss.node()->grad_buffer()[0] += T(1);
  for (auto it = entries.rbegin(); it != entries.rend(); ++it) {
    if (it->output->grad.empty()) continue;
    if (options.visited) options.visited->emplace_back(it->op);
    it->backward(it->output->grad);
  }
  if (!options.retain_tape) tape.clear();
}

template <std::floating_point T>
void backward(const Tensor<T>& loss, BackwardOptions options) {
  backward(Tape<T>::active(), loss, options);
}

template class Tensor<float>;
template class Tensor<double>;
template class Tape<float>;
template class Tape<double>;
template class TapeScope<float>;
template class TapeScope<double>;
template void backward(Tape<float>&, const Tensor<float>&, BackwardOptions);
template void backward(Tape<double>&, const Tensor<double>&, BackwardOptions);
template void backward(const Tensor<float>&, BackwardOptions);
template void backward(const Tensor<double>&, BackwardOptions);

}  // namespace layoutsynth
