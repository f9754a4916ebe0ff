#pragma once

#include <cstdint>
#include <functional>
#include <span>

#include "layoutsynth/tensor.hpp"

namespace layoutsynth {

struct GradCheckReport {
  double max_relative_error = 0;
  std::size_t tensor_index = 0;  // tensor holding the worst coordinate
  std::size_t coordinate = 0;
  double analytic = 0;
  double numeric = 0;
  std::size_t coordinates_checked = 0;
  // Coordinates whose estimate needed a smaller step to converge.
  std::size_t refined_coordinates = 0;
};

// Compares the autodiff gradient of the scalar f(x) with central differences
// (f(x+h) - f(x-h)) / 2h per coordinate. Relative error uses the denominator
// max(|a|, |b|, 1e-6 * s), s being the largest gradient magnitude among the
// checked coordinates, so exactly-zero gradients are judged against the
// finite-difference resolution. Each estimate is confirmed against one with
// step h/10; while they disagree (a ReLU or |x| kink within the step) the
// finer estimate replaces it, down to h/1000.
template <std::floating_point T>
double grad_check(const std::function<Tensor<T>(const Tensor<T>&)>& f,
                  const Tensor<T>& x, double h = 1e-5);

// Same comparison for a closure over existing leaf tensors (typically network
// parameters). Perturbs each tensor in place and restores it. When
// max_coords_per_tensor is nonzero, that many coordinates per tensor are
// chosen with a fixed stride pattern instead of checking all of them.
template <std::floating_point T>
GradCheckReport grad_check_leaves(const std::function<Tensor<T>()>& f,
                                  std::span<Tensor<T>> leaves, double h = 1e-5,
                                  std::size_t max_coords_per_tensor = 0);

}  // namespace layoutsynth
