#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "layoutsynth/tensor.hpp"

namespace layoutsynth {

// Persistent left/right singular vector estimates for one weight, with the
// weight viewed as [dim0 x rest].
template <std::floating_point T>
struct PowerIterationState {
  std::vector<T> u;
  std::vector<T> v;
};

// Random unit u and matching v = normalize(W^T u).
template <std::floating_point T>
PowerIterationState<T> init_power_state(const Tensor<T>& weight, std::uint64_t seed);

// Runs `iters` rounds of v <- normalize(W^T u), u <- normalize(W v).
template <std::floating_point T>
void power_iterate(const Tensor<T>& weight, PowerIterationState<T>& state, int iters);

// weight / sigma_hat after `iters` power-iteration rounds; sigma_hat = u^T W v
// is floored at 1e-12. Differentiable w.r.t. weight with u, v held constant.
template <std::floating_point T>
Tensor<T> spectral_normalize(const Tensor<T>& weight,
                             PowerIterationState<T>& state, int iters);

// Orthogonal matrix of the given shape (conv kernels are flattened to
// [out x in*kh*kw]): orthonormal rows when rows <= cols, otherwise orthonormal
// columns. Deterministic in seed.
template <std::floating_point T>
Tensor<T> orthogonal_init(const Shape& shape, std::uint64_t seed, double gain = 1.0);

template <std::floating_point T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  bool spectral = false;
  PowerIterationState<T> power;
};

// Named, ordered parameter collection. Names follow the checkpoint scheme
// (gen.*, disc.*, isla.<stage>.<name>).
template <std::floating_point T>
class ParameterStore {
 public:
  enum class Init { kOrthogonal, kZeros, kOnes };

  // Registers a leaf parameter. Spectral parameters get a power-iteration
  // state derived from the same seed.
  Tensor<T>& add(const std::string& name, Shape shape, Init init,
                 std::uint64_t seed, bool spectral);

  const Parameter<T>& get(const std::string& name) const;
  Parameter<T>& get(const std::string& name);
  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  // The value used in the forward pass: spectral-normalized when flagged.
  Tensor<T> weight(const std::string& name) const;

  void refresh_spectral(int iters);
  void set_requires_grad(bool on);
  void zero_grad();

  std::vector<Parameter<T>>& params() { return params_; }
  const std::vector<Parameter<T>>& params() const { return params_; }
  std::vector<Tensor<T>> tensors() const;
  std::size_t scalar_count() const;

 private:
  std::vector<Parameter<T>> params_;
  std::map<std::string, std::size_t> index_;
};

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.0;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <std::floating_point T>
struct AdamState {
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
  std::uint64_t step = 0;
};

// One bias-corrected Adam update of every tensor from its accumulated
// gradient (tensors without gradient are treated as zero-gradient). Moments
// are created on first use.
template <std::floating_point T>
void adam_step(std::span<Tensor<T>> params, AdamState<T>& state,
               const AdamConfig& config);

template <std::floating_point T>
void adam_step(ParameterStore<T>& store, AdamState<T>& state,
               const AdamConfig& config);

}  // namespace layoutsynth
