#include "layoutsynth/nn.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>

#include "layoutsynth/ops.hpp"
#include "layoutsynth/rng.hpp"

namespace layoutsynth {
namespace {

template <typename T>
void normalize(std::vector<T>& x) {
  double n = 0;
  for (const T v : x) n += double(v) * v;
  n = std::max(std::sqrt(n), 1e-12);
  for (T& v : x) v = static_cast<T>(v / n);
}

template <typename T>
std::pair<std::size_t, std::size_t> matrix_dims(const Tensor<T>& w) {
  const std::size_t rows = w.dim(0);
  return {rows, rows ? w.numel() / rows : 0};
}

}  // namespace

template <std::floating_point T>
PowerIterationState<T> init_power_state(const Tensor<T>& weight, std::uint64_t seed) {
  const auto [rows, cols] = matrix_dims(weight);
  PowerIterationState<T> s;
  Prng rng(seed);
  s.u.resize(rows);
  for (auto& v : s.u) v = static_cast<T>(rng.normal());
  normalize(s.u);
  s.v.assign(cols, T(0));
  const auto w = weight.data();
  for (std::size_t q = 0; q < cols; ++q) {
    double acc = 0;
    for (std::size_t r = 0; r < rows; ++r) acc += double(w[r * cols + q]) * s.u[r];
    s.v[q] = static_cast<T>(acc);
  }
  normalize(s.v);
  return s;
}

template <std::floating_point T>
void power_iterate(const Tensor<T>& weight, PowerIterationState<T>& s, int iters) {
  const auto [rows, cols] = matrix_dims(weight);
  const auto w = weight.data();
  for (int it = 0; it < iters; ++it) {
    for (std::size_t q = 0; q < cols; ++q) {
      double acc = 0;
      for (std::size_t r = 0; r < rows; ++r) acc += double(w[r * cols + q]) * s.u[r];
      s.v[q] = static_cast<T>(acc);
    }
    normalize(s.v);
    for (std::size_t r = 0; r < rows; ++r) {
      double acc = 0;
      for (std::size_t q = 0; q < cols; ++q) acc += double(w[r * cols + q]) * s.v[q];
      s.u[r] = static_cast<T>(acc);
    }
    normalize(s.u);
  }
}

template <std::floating_point T>
Tensor<T> spectral_normalize(const Tensor<T>& weight, PowerIterationState<T>& state,
                             int iters) {
  power_iterate(weight, state, iters);
  return spectral_scale<T>(weight, state.u, state.v);
}

template <std::floating_point T>
Tensor<T> orthogonal_init(const Shape& shape, std::uint64_t seed, double gain) {
  if (shape.empty()) throw ContractError("orthogonal_init needs rank >= 1");
  const std::size_t rows = shape[0];
  const std::size_t cols = rows ? numel(shape) / rows : 0;
  const std::size_t big = std::max(rows, cols), small = std::min(rows, cols);
  Prng rng(seed);
  Eigen::MatrixXd g(big, small);
  for (Eigen::Index j = 0; j < g.cols(); ++j)
    for (Eigen::Index i = 0; i < g.rows(); ++i) g(i, j) = rng.normal();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(big, small);
  const Eigen::MatrixXd r = qr.matrixQR().topRows(small).triangularView<Eigen::Upper>();
  for (Eigen::Index j = 0; j < q.cols(); ++j) {
    if (r(j, j) < 0) q.col(j) *= -1.0;
  }
  std::vector<T> data(rows * cols);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) {
      const double v = rows >= cols ? q(i, j) : q(j, i);
      data[i * cols + j] = static_cast<T>(gain * v);
    }
  return Tensor<T>(shape, std::move(data));
}

template <std::floating_point T>
Tensor<T>& ParameterStore<T>::add(const std::string& name, Shape shape, Init init,
                                  std::uint64_t seed, bool spectral) {
  if (index_.count(name)) throw ContractError("duplicate parameter " + name);
  Parameter<T> p;
  p.name = name;
  switch (init) {
    case Init::kOrthogonal: p.value = orthogonal_init<T>(shape, seed); break;
    case Init::kZeros: p.value = Tensor<T>::zeros(shape); break;
    case Init::kOnes: p.value = Tensor<T>::ones(shape); break;
  }
  p.value.set_requires_grad(true);
  p.spectral = spectral;
  if (spectral) p.power = init_power_state(p.value, split_seed(seed, 0x5eed));
  index_[name] = params_.size();
  params_.push_back(std::move(p));
  return params_.back().value;
}

template <std::floating_point T>
const Parameter<T>& ParameterStore<T>::get(const std::string& name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("unknown parameter " + name);
  return params_[it->second];
}

template <std::floating_point T>
Parameter<T>& ParameterStore<T>::get(const std::string& name) {
  const auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("unknown parameter " + name);
  return params_[it->second];
}

template <std::floating_point T>
Tensor<T> ParameterStore<T>::weight(const std::string& name) const {
  const auto& p = get(name);
  if (!p.spectral) return p.value;
  return spectral_scale<T>(p.value, p.power.u, p.power.v);
}

template <std::floating_point T>
void ParameterStore<T>::refresh_spectral(int iters) {
  for (auto& p : params_)
    if (p.spectral) power_iterate(p.value, p.power, iters);
}

template <std::floating_point T>
void ParameterStore<T>::set_requires_grad(bool on) {
  for (auto& p : params_) p.value.set_requires_grad(on);
}

template <std::floating_point T>
void ParameterStore<T>::zero_grad() {
  for (auto& p : params_) p.value.zero_grad();
}

template <std::floating_point T>
std::vector<Tensor<T>> ParameterStore<T>::tensors() const {
  std::vector<Tensor<T>> out;
  for (const auto& p : params_) out.push_back(p.value);
  return out;
}

template <std::floating_point T>
std::size_t ParameterStore<T>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.numel();
  return n;
}

template <std::floating_point T>
void adam_step(std::span<Tensor<T>> params, AdamState<T>& state,
               const AdamConfig& config) {
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.numel(), T(0));
      state.v.emplace_back(p.numel(), T(0));
    }
  }
  if (state.m.size() != params.size()) {
    throw DimensionError("adam_step: optimizer state has " +
                         std::to_string(state.m.size()) + " slots for " +
                         std::to_string(params.size()) + " parameters");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(config.beta1, t);
  const double bc2 = 1.0 - std::pow(config.beta2, t);
  const T b1 = static_cast<T>(config.beta1), b2 = static_cast<T>(config.beta2);
  const T lr = static_cast<T>(config.lr), eps = static_cast<T>(config.eps);
  const T inv_bc1 = static_cast<T>(1.0 / bc1), inv_bc2 = static_cast<T>(1.0 / bc2);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k];
    if (state.m[k].size() != p.numel()) {
      throw DimensionError("adam_step: moment shape mismatch for parameter " +
                           std::to_string(k));
    }
    if (!p.has_grad()) {
      // Zero gradient: moments decay and the update is skipped only when both
      // moments are zero (the common case of an unused parameter).
      bool all_zero = true;
      for (std::size_t i = 0; i < p.numel() && all_zero; ++i)
        all_zero = state.m[k][i] == T(0) && state.v[k][i] == T(0);
      if (all_zero) continue;
    }
    const auto g = p.grad();
    auto w = p.mutable_data();
    auto& m = state.m[k];
    auto& v = state.v[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = b1 * m[i] + (T(1) - b1) * g[i];
      v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
      const T mhat = m[i] * inv_bc1;
      const T vhat = v[i] * inv_bc2;
      w[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

template <std::floating_point T>
void adam_step(ParameterStore<T>& store, AdamState<T>& state,
               const AdamConfig& config) {
  auto tensors = store.tensors();
  adam_step<T>(std::span<Tensor<T>>(tensors), state, config);
}

#define LAYOUTSYNTH_INSTANTIATE_NN(T)                                               \
  template PowerIterationState<T> init_power_state(const Tensor<T>&, std::uint64_t); \
  template void power_iterate(const Tensor<T>&, PowerIterationState<T>&, int);      \
  template Tensor<T> spectral_normalize(const Tensor<T>&, PowerIterationState<T>&,  \
                                        int);                                       \
  template Tensor<T> orthogonal_init(const Shape&, std::uint64_t, double);          \
  template class ParameterStore<T>;                                                 \
  template void adam_step(std::span<Tensor<T>>, AdamState<T>&, const AdamConfig&);  \
  template void adam_step(ParameterStore<T>&, AdamState<T>&, const AdamConfig&);

LAYOUTSYNTH_INSTANTIATE_NN(float)
LAYOUTSYNTH_INSTANTIATE_NN(double)

}  // namespace layoutsynth
