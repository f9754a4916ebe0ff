#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "layoutsynth/tensor.hpp"

namespace layoutsynth {

// Numeric constant under the square root of the batch standard deviation.
inline constexpr double kBatchNormEpsilon = 1e-5;

// ---------------------------------------------------------------------------
// Linear algebra

// a[M x K] . b[K x N] -> [M x N].
template <std::floating_point T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

// 2-D transpose.
template <std::floating_point T>
Tensor<T> transpose(const Tensor<T>& a);

// Cross-correlation of x[N x C x H x W] with k[C' x C x kh x kw]. Kernel sides
// must be odd and (H + 2*padding - kh) must be divisible by stride.
template <std::floating_point T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& k, std::size_t stride = 1,
                 std::size_t padding = 0);

// ---------------------------------------------------------------------------
// Resampling over the two trailing axes.

// Bilinear interpolation. With align_corners the corner samples of input and
// output coincide; without it, pixel centers are aligned and source coordinates
// below zero are clamped (the common image-resize convention).
template <std::floating_point T>
Tensor<T> bilinear_resize(const Tensor<T>& x, std::size_t out_h,
                          std::size_t out_w, bool align_corners = false);

template <std::floating_point T>
Tensor<T> upsample_nearest2x(const Tensor<T>& x);

template <std::floating_point T>
Tensor<T> avg_pool2x(const Tensor<T>& x);

// Places x[..., h, w] at (top, left) inside a zero canvas [..., H, W].
template <std::floating_point T>
Tensor<T> pad2d(const Tensor<T>& x, std::size_t out_h, std::size_t out_w,
                std::size_t top, std::size_t left);

// Continuous box in feature-map pixel units; pixel j spans [j, j+1).
struct RoiBox {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
};

// Samples feature[C x H x W] on a k x k grid of bin centers over `box` with
// bilinear interpolation and no quantization of the box edges.
template <std::floating_point T>
Tensor<T> roi_align(const Tensor<T>& feature, const RoiBox& box, std::size_t k);

// ---------------------------------------------------------------------------
// Elementwise. Binary ops accept equal shapes, a one-element right operand,
// or a right operand of shape [C] broadcast along axis 1 of a rank >= 2 left
// operand.

template <std::floating_point T> Tensor<T> relu(const Tensor<T>& x);
template <std::floating_point T> Tensor<T> sigmoid(const Tensor<T>& x);
template <std::floating_point T> Tensor<T> tanh(const Tensor<T>& x);
template <std::floating_point T> Tensor<T> sqrt(const Tensor<T>& x);
template <std::floating_point T> Tensor<T> square(const Tensor<T>& x);
template <std::floating_point T> Tensor<T> abs(const Tensor<T>& x);
template <std::floating_point T> Tensor<T> reciprocal(const Tensor<T>& x);

template <std::floating_point T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <std::floating_point T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <std::floating_point T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

template <std::floating_point T>
Tensor<T> add_scalar(const Tensor<T>& x, double c);
template <std::floating_point T>
Tensor<T> scale(const Tensor<T>& x, double c);

// (1 - alpha) * a + alpha * b with a one-element alpha.
template <std::floating_point T>
Tensor<T> blend(const Tensor<T>& a, const Tensor<T>& b, const Tensor<T>& alpha);

// ---------------------------------------------------------------------------
// Reductions and shape manipulation

template <std::floating_point T> Tensor<T> sum(const Tensor<T>& x);
template <std::floating_point T> Tensor<T> mean(const Tensor<T>& x);
// Sum of absolute values.
template <std::floating_point T> Tensor<T> l1_norm(const Tensor<T>& x);

// Sums over one axis, removing it.
template <std::floating_point T>
Tensor<T> reduce_sum(const Tensor<T>& x, std::size_t axis);

template <std::floating_point T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);

template <std::floating_point T>
Tensor<T> concat(std::span<const Tensor<T>> parts, std::size_t axis);
template <std::floating_point T>
Tensor<T> concat(std::initializer_list<Tensor<T>> parts, std::size_t axis) {
  std::vector<Tensor<T>> v(parts);
  return concat<T>(std::span<const Tensor<T>>(v), axis);
}

// Half-open range [begin, end) along `axis`.
template <std::floating_point T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t begin,
                std::size_t end);

// ---------------------------------------------------------------------------
// Normalization

template <std::floating_point T>
struct BatchStats {
  Tensor<T> mean;   // [C]
  Tensor<T> sigma;  // [C], sqrt(var + eps)
};

// Channel statistics over (n, h, w) of x[N x C x ...] with the biased variance.
template <std::floating_point T>
BatchStats<T> batch_stats(const Tensor<T>& x, double eps = kBatchNormEpsilon);

// (x - mean_c) / sigma_c using batch_stats over the whole tensor.
template <std::floating_point T>
Tensor<T> standardize(const Tensor<T>& x, double eps = kBatchNormEpsilon);

// ---------------------------------------------------------------------------
// Fused kernels for the instance-aware normalization and weight normalization.

// Spreads per-instance channel values over the lattice through instance masks:
//   out[c,p] = sum_i masks[i,p] * values[i,c] / den[p]
// with den[p] = max(sum_i masks[i,p], floor) where occupancy[p] > 1 and 1
// elsewhere. masks is [m x H x W], values [m x C], occupancy has H*W entries.
template <std::floating_point T>
Tensor<T> masked_affine_field(const Tensor<T>& masks, const Tensor<T>& values,
                              std::span<const std::int32_t> occupancy,
                              double floor = 1e-8);

// weight / sigma with sigma = u^T W v, W being weight reshaped to
// [dim0 x rest]. u and v are treated as constants; sigma is floored at 1e-12.
template <std::floating_point T>
Tensor<T> spectral_scale(const Tensor<T>& weight, std::span<const T> u,
                         std::span<const T> v);

}  // namespace layoutsynth
