#pragma once

// Straightforward reference implementations used as test oracles. They share
// no code with the library kernels.

#include <cmath>
#include <cstdint>
#include <vector>

#include "layoutsynth/layout.hpp"
#include "layoutsynth/rng.hpp"
#include "layoutsynth/tensor.hpp"

namespace oracle {

using layoutsynth::Shape;
using layoutsynth::Tensor;

template <typename T>
Tensor<T> random_tensor(Shape shape, std::uint64_t seed, double lo = -1, double hi = 1) {
  layoutsynth::Prng rng(seed);
  std::vector<T> d(layoutsynth::numel(shape));
  for (auto& v : d) v = static_cast<T>(rng.uniform(lo, hi));
  return Tensor<T>(std::move(shape), std::move(d));
}

// Values bounded away from zero: |v| in [0.2, 1].
template <typename T>
Tensor<T> random_away_from_zero(Shape shape, std::uint64_t seed) {
  layoutsynth::Prng rng(seed);
  std::vector<T> d(layoutsynth::numel(shape));
  for (auto& v : d) {
    const double m = rng.uniform(0.2, 1.0);
    v = static_cast<T>(rng.uniform() < 0.5 ? -m : m);
  }
  return Tensor<T>(std::move(shape), std::move(d));
}

template <typename T>
std::vector<double> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t p = 0; p < k; ++p)
        out[i * n + j] += static_cast<double>(a[i * k + p]) * b[p * n + j];
  return out;
}

template <typename T>
std::vector<double> conv2d(const Tensor<T>& x, const Tensor<T>& w, std::size_t stride,
                           std::size_t pad) {
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const std::size_t oh = (h + 2 * pad - kh) / stride + 1;
  const std::size_t ow = (wd + 2 * pad - kw) / stride + 1;
  std::vector<double> out(n * co * oh * ow, 0.0);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t o = 0; o < co; ++o)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t xx = 0; xx < ow; ++xx) {
          double s = 0;
          for (std::size_t ci = 0; ci < c; ++ci)
            for (std::size_t dy = 0; dy < kh; ++dy)
              for (std::size_t dx = 0; dx < kw; ++dx) {
                const long iy = static_cast<long>(y * stride + dy) - static_cast<long>(pad);
                const long ix = static_cast<long>(xx * stride + dx) - static_cast<long>(pad);
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) ||
                    ix >= static_cast<long>(wd))
                  continue;
                s += static_cast<double>(x[((b * c + ci) * h + iy) * wd + ix]) *
                     w[((o * c + ci) * kh + dy) * kw + dx];
              }
          out[((b * co + o) * oh + y) * ow + xx] = s;
        }
  return out;
}

// Two-pass per-channel mean and biased variance over (n, h, w).
template <typename T>
void channel_stats(const Tensor<T>& x, std::vector<double>& mean, std::vector<double>& var) {
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.numel() / (n * c);
  mean.assign(c, 0.0);
  var.assign(c, 0.0);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t p = 0; p < hw; ++p) mean[ch] += x[(b * c + ch) * hw + p];
    mean[ch] /= static_cast<double>(n * hw);
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t p = 0; p < hw; ++p) {
        const double d = x[(b * c + ch) * hw + p] - mean[ch];
        var[ch] += d * d;
      }
    var[ch] /= static_cast<double>(n * hw);
  }
}

// The instance-aware affine field written as the literal per-pixel loop:
// for every pixel and channel, sum the mask-weighted instance values and
// divide by the summed mask weight where boxes overlap.
template <typename T>
void compose_field(const Tensor<T>& masks, const Tensor<T>& table,
                   const layoutsynth::Layout& layout, std::vector<double>& gamma,
                   std::vector<double>& beta) {
  const std::size_t m = masks.dim(0), h = masks.dim(1), w = masks.dim(2);
  const std::size_t c = table.dim(1) / 2;
  gamma.assign(c * h * w, 0.0);
  beta.assign(c * h * w, 0.0);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      int covering = 0;
      for (const auto& b : layout.boxes) {
        if (layoutsynth::box_to_pixels(b.box, h, w).contains(y, x)) ++covering;
      }
      double den = 1.0;
      if (covering > 1) {
        den = 0;
        for (std::size_t i = 0; i < m; ++i) den += masks[(i * h + y) * w + x];
        den = std::max(den, 1e-8);
      }
      for (std::size_t ch = 0; ch < c; ++ch) {
        double g = 0, bt = 0;
        for (std::size_t i = 0; i < m; ++i) {
          const double mk = masks[(i * h + y) * w + x];
          bt += mk * table[i * 2 * c + ch];
          g += mk * table[i * 2 * c + c + ch];
        }
        gamma[(ch * h + y) * w + x] = g / den;
        beta[(ch * h + y) * w + x] = bt / den;
      }
    }
  }
}

}  // namespace oracle
