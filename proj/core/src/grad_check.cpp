#include "layoutsynth/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace layoutsynth {
namespace {

// A central difference is accepted once the estimate with a 10x smaller step
// agrees with it to this fraction (plus roundoff); a kink within the step
// shows up as a disagreement.
constexpr double kConvergence = 1e-5;
constexpr int kRefinements = 3;
// Denominator floor relative to the largest gradient magnitude seen.
constexpr double kScaleFloor = 1e-6;

struct Sample {
  std::size_t tensor = 0;
  std::size_t coordinate = 0;
  double analytic = 0;
  double numeric = 0;
  bool refined = false;
};

}  // namespace

template <std::floating_point T>
double grad_check(const std::function<Tensor<T>(const Tensor<T>&)>& f,
                  const Tensor<T>& x, double h) {
  Tensor<T> leaf = x.clone();
  leaf.set_requires_grad(true);
  std::vector<Tensor<T>> leaves{leaf};
  const auto report = grad_check_leaves<T>([&] { return f(leaf); }, leaves, h);
  return report.max_relative_error;
}

template <std::floating_point T>
GradCheckReport grad_check_leaves(const std::function<Tensor<T>()>& f,
                                  std::span<Tensor<T>> leaves, double h,
                                  std::size_t max_coords_per_tensor) {
  Tape<T> tape;
  std::vector<std::vector<T>> analytic;
  {
    TapeScope<T> scope(tape);
    for (auto& t : leaves) t.zero_grad();
    const Tensor<T> loss = f();
    backward(tape, loss);
    for (auto& t : leaves) analytic.push_back(t.grad());
  }
  NoGradGuard no_grad;
  const double base = f().item();
  const double eps = std::numeric_limits<T>::epsilon();
  std::vector<Sample> samples;
  for (std::size_t k = 0; k < leaves.size(); ++k) {
    auto data = leaves[k].mutable_data();
    const std::size_t n = data.size();
    std::size_t step = 1;
    if (max_coords_per_tensor > 0 && n > max_coords_per_tensor) {
      step = (n + max_coords_per_tensor - 1) / max_coords_per_tensor;
    }
    for (std::size_t i = 0; i < n; i += step) {
      const T saved = data[i];
      Sample s{k, i, static_cast<double>(analytic[k][i]), 0, false};
      const auto central = [&](double step_size) {
        data[i] = static_cast<T>(saved + step_size);
        const double up = f().item();
        data[i] = static_cast<T>(saved - step_size);
        const double down = f().item();
        data[i] = saved;
        return (up - down) / (2 * step_size);
      };
      double hk = h;
      s.numeric = central(hk);
      for (int attempt = 0; attempt < kRefinements; ++attempt) {
        const double finer = central(hk / 10);
        const double noise = 4 * eps * std::max(1.0, std::abs(base)) / (hk / 10);
        if (std::abs(finer - s.numeric) <=
            kConvergence * std::max(std::abs(finer), std::abs(s.numeric)) + noise) {
          break;
        }
        s.numeric = finer;
        s.refined = true;
        hk /= 10;
      }
      samples.push_back(s);
    }
  }
  double scale = 0;
  for (const auto& s : samples) scale = std::max({scale, std::abs(s.analytic), std::abs(s.numeric)});
  const double floor = std::max(kScaleFloor * scale, 1e-12);
  GradCheckReport report;
  for (const auto& s : samples) {
    const double err = std::abs(s.analytic - s.numeric) /
                       std::max({std::abs(s.analytic), std::abs(s.numeric), floor});
    ++report.coordinates_checked;
    if (s.refined) ++report.refined_coordinates;
    if (err > report.max_relative_error) {
      report.max_relative_error = err;
      report.tensor_index = s.tensor;
      report.coordinate = s.coordinate;
      report.analytic = s.analytic;
      report.numeric = s.numeric;
    }
  }
  return report;
}

template double grad_check(const std::function<Tensor<float>(const Tensor<float>&)>&,
                           const Tensor<float>&, double);
template double grad_check(const std::function<Tensor<double>(const Tensor<double>&)>&,
                           const Tensor<double>&, double);
template GradCheckReport grad_check_leaves(const std::function<Tensor<float>()>&,
                                           std::span<Tensor<float>>, double,
                                           std::size_t);
template GradCheckReport grad_check_leaves(const std::function<Tensor<double>()>&,
                                           std::span<Tensor<double>>, double,
                                           std::size_t);

}  // namespace layoutsynth
