#include "layoutsynth/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace layoutsynth {
namespace {

template <typename T>
using NodePtr = std::shared_ptr<detail::Node<T>>;

template <typename T>
using BackwardFn = std::function<void(std::span<const T> gout,
                                      std::span<const T> out)>;

template <typename T>
bool needs_record(std::initializer_list<const Tensor<T>*> inputs) {
  if (NoGradGuard::enabled()) return false;
  for (const auto* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

// Wraps freshly computed data into a tensor, validates finiteness, and records
// the backward closure when any input participates in differentiation.
template <typename T>
Tensor<T> finish(std::string_view op, Shape shape, std::vector<T> data,
                 bool record, BackwardFn<T> fn) {
  for (const T v : data) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string(op),
                         std::string(op) + " produced a non-finite value");
    }
  }
  Tensor<T> out(std::move(shape), std::move(data));
  if (record) {
    auto node = out.node();
    node->requires_grad = true;
    node->leaf = false;
    detail::Node<T>* raw = node.get();
    Tape<T>::active().record(
        op, node, [raw, fn = std::move(fn)](std::span<const T> gout) {
          fn(gout, raw->data);
        });
  }
  return out;
}

// C[M x N] += A[M x K] . B[K x N]; all row-major with the given leading dims.
template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a,
             std::size_t lda, const T* b, std::size_t ldb, T* c,
             std::size_t ldc) {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    T* c0 = c + i * ldc;
    T* c1 = c0 + ldc;
    T* c2 = c1 + ldc;
    T* c3 = c2 + ldc;
    for (std::size_t p = 0; p < k; ++p) {
      const T a0 = a[i * lda + p];
      const T a1 = a[(i + 1) * lda + p];
      const T a2 = a[(i + 2) * lda + p];
      const T a3 = a[(i + 3) * lda + p];
      const T* br = b + p * ldb;
      for (std::size_t j = 0; j < n; ++j) {
        const T bv = br[j];
        c0[j] += a0 * bv;
        c1[j] += a1 * bv;
        c2[j] += a2 * bv;
        c3[j] += a3 * bv;
      }
    }
  }
  for (; i < m; ++i) {
    T* ci = c + i * ldc;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * lda + p];
      const T* br = b + p * ldb;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * br[j];
    }
  }
}

// C[M x N] += A^T . B where A is stored [K x M] and B is [K x N].
template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a,
             std::size_t lda, const T* b, std::size_t ldb, T* c,
             std::size_t ldc) {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    T* c0 = c + i * ldc;
    T* c1 = c0 + ldc;
    T* c2 = c1 + ldc;
    T* c3 = c2 + ldc;
    for (std::size_t p = 0; p < k; ++p) {
      const T* ar = a + p * lda + i;
      const T a0 = ar[0], a1 = ar[1], a2 = ar[2], a3 = ar[3];
      const T* br = b + p * ldb;
      for (std::size_t j = 0; j < n; ++j) {
        const T bv = br[j];
        c0[j] += a0 * bv;
        c1[j] += a1 * bv;
        c2[j] += a2 * bv;
        c3[j] += a3 * bv;
      }
    }
  }
  for (; i < m; ++i) {
    T* ci = c + i * ldc;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[p * lda + i];
      const T* br = b + p * ldb;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * br[j];
    }
  }
}

template <typename T>
std::vector<T> transposed(const T* a, std::size_t rows, std::size_t cols) {
  std::vector<T> t(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) t[c * rows + r] = a[r * cols + c];
  return t;
}

// C[M x N] += A[M x K] . B^T where B is stored [N x K].
template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a,
             const T* b, T* c) {
  const auto bt = transposed(b, n, k);
  gemm_nn(m, n, k, a, k, bt.data(), n, c, n);
}

void require(bool cond, const std::string& msg) {
  if (!cond) throw DimensionError(msg);
}

std::size_t plane_count(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t i = 0; i + 2 < s.size(); ++i) n *= s[i];
  return n;
}

}  // namespace

// ---------------------------------------------------------------------------

template <std::floating_point T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(0),
          "matmul shape mismatch: " + to_string(a.shape()) + " . " +
              to_string(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<T> out(m * n, T(0));
  gemm_nn(m, n, k, a.data().data(), k, b.data().data(), n, out.data(), n);
  auto an = a.node();
  auto bn = b.node();
  return finish<T>("matmul", {m, n}, std::move(out), needs_record({&a, &b}),
                   [an, bn, m, n, k](std::span<const T> g, std::span<const T>) {
                     if (an->requires_grad) {
                       gemm_nt(m, k, n, g.data(), bn->data.data(),
                               an->grad_buffer().data());
                     }
                     if (bn->requires_grad) {
                       gemm_tn(k, n, m, an->data.data(), k, g.data(), n,
                               bn->grad_buffer().data(), n);
                     }
                   });
}

template <std::floating_point T>
Tensor<T> transpose(const Tensor<T>& a) {
  require(a.rank() == 2, "transpose expects rank 2, got " + to_string(a.shape()));
  const std::size_t r = a.dim(0), c = a.dim(1);
  auto an = a.node();
  return finish<T>("transpose", {c, r}, transposed(a.data().data(), r, c),
                   needs_record({&a}),
                   [an, r, c](std::span<const T> g, std::span<const T>) {
                     auto ga = an->grad_buffer();
                     for (std::size_t i = 0; i < r; ++i)
                       for (std::size_t j = 0; j < c; ++j)
                         ga[i * c + j] += g[j * r + i];
                   });
}

namespace {

struct ConvGeom {
  std::size_t n, c, h, w, co, kh, kw, stride, pad, ho, wo;
  std::size_t cols() const { return c * kh * kw; }
  std::size_t pixels() const { return ho * wo; }
};

template <typename T>
void im2col(const ConvGeom& g, const T* x, T* col) {
  std::size_t row = 0;
  for (std::size_t ci = 0; ci < g.c; ++ci) {
    const T* plane = x + ci * g.h * g.w;
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx, ++row) {
        T* dst = col + row * g.pixels();
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                    static_cast<std::ptrdiff_t>(g.pad);
          T* d = dst + oy * g.wo;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) {
            std::fill(d, d + g.wo, T(0));
            continue;
          }
          const T* src = plane + iy * g.w;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                                      static_cast<std::ptrdiff_t>(g.pad);
            d[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) ? T(0) : src[ix];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const ConvGeom& g, const T* col, T* x) {
  std::size_t row = 0;
  for (std::size_t ci = 0; ci < g.c; ++ci) {
    T* plane = x + ci * g.h * g.w;
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx, ++row) {
        const T* src = col + row * g.pixels();
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                    static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
          T* d = plane + iy * g.w;
          const T* s = src + oy * g.wo;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                                      static_cast<std::ptrdiff_t>(g.pad);
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.w)) d[ix] += s[ox];
          }
        }
      }
    }
  }
}

}  // namespace

template <std::floating_point T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& k, std::size_t stride,
                 std::size_t padding) {
  require(x.rank() == 4 && k.rank() == 4,
          "conv2d expects 4-D input and kernel, got " + to_string(x.shape()) +
              " and " + to_string(k.shape()));
  require(x.dim(1) == k.dim(1), "conv2d channel mismatch: input " +
                                    to_string(x.shape()) + " kernel " +
                                    to_string(k.shape()));
  if (k.dim(2) % 2 == 0 || k.dim(3) % 2 == 0) {
    throw ContractError("conv2d kernel sides must be odd, got " +
                        to_string(k.shape()));
  }
  if (stride == 0) throw ContractError("conv2d stride must be positive");
  ConvGeom g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), k.dim(0), k.dim(2), k.dim(3),
             stride, padding, 0, 0};
  const std::size_t span_h = g.h + 2 * g.pad, span_w = g.w + 2 * g.pad;
  require(span_h >= g.kh && span_w >= g.kw &&
              (span_h - g.kh) % stride == 0 && (span_w - g.kw) % stride == 0,
          "conv2d padding/stride give a non-integral output size for " +
              to_string(x.shape()));
  g.ho = (span_h - g.kh) / stride + 1;
  g.wo = (span_w - g.kw) / stride + 1;

  const std::size_t in_plane = g.c * g.h * g.w;
  const std::size_t out_plane = g.co * g.pixels();
  std::vector<T> out(g.n * out_plane, T(0));
  std::vector<T> col(g.cols() * g.pixels());
  const bool pointwise = g.kh == 1 && g.kw == 1 && g.stride == 1 && g.pad == 0;
  for (std::size_t n = 0; n < g.n; ++n) {
    const T* xin = x.data().data() + n * in_plane;
    const T* src = xin;
    if (!pointwise) {
      im2col(g, xin, col.data());
      src = col.data();
    }
    gemm_nn(g.co, g.pixels(), g.cols(), k.data().data(), g.cols(), src,
            g.pixels(), out.data() + n * out_plane, g.pixels());
  }
  auto xn = x.node();
  auto kn = k.node();
  return finish<T>(
      "conv2d", {g.n, g.co, g.ho, g.wo}, std::move(out), needs_record({&x, &k}),
      [xn, kn, g, pointwise](std::span<const T> gout, std::span<const T>) {
        const std::size_t in_plane = g.c * g.h * g.w;
        const std::size_t out_plane = g.co * g.pixels();
        std::vector<T> col(g.cols() * g.pixels());
        std::vector<T> gcol(g.cols() * g.pixels());
        for (std::size_t n = 0; n < g.n; ++n) {
          const T* go = gout.data() + n * out_plane;
          if (kn->requires_grad) {
            const T* src = xn->data.data() + n * in_plane;
            if (!pointwise) {
              im2col(g, src, col.data());
              src = col.data();
            }
            gemm_nt(g.co, g.cols(), g.pixels(), go, src,
                    kn->grad_buffer().data());
          }
          if (xn->requires_grad) {
            T* gx = xn->grad_buffer().data() + n * in_plane;
            if (pointwise) {
              gemm_tn(g.cols(), g.pixels(), g.co, kn->data.data(), g.cols(), go,
                      g.pixels(), gx, g.pixels());
            } else {
              std::fill(gcol.begin(), gcol.end(), T(0));
              gemm_tn(g.cols(), g.pixels(), g.co, kn->data.data(), g.cols(), go,
                      g.pixels(), gcol.data(), g.pixels());
              col2im_add(g, gcol.data(), gx);
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------

namespace {

struct Tap {
  std::size_t i0, i1;
  double w0, w1;  // weights for i0 and i1
};

std::vector<Tap> bilinear_taps(std::size_t in, std::size_t out, bool align) {
  std::vector<Tap> taps(out);
  for (std::size_t o = 0; o < out; ++o) {
    double src;
    if (align) {
      src = out > 1 ? static_cast<double>(o) * static_cast<double>(in - 1) /
                          static_cast<double>(out - 1)
                    : 0.0;
    } else {
      src = (static_cast<double>(o) + 0.5) * static_cast<double>(in) /
                static_cast<double>(out) - 0.5;
      if (src < 0) src = 0;
    }
    auto i0 = static_cast<std::size_t>(std::floor(src));
    if (i0 > in - 1) i0 = in - 1;
    const std::size_t i1 = std::min(i0 + 1, in - 1);
    const double frac = src - static_cast<double>(i0);
    taps[o] = Tap{i0, i1, 1.0 - frac, frac};
  }
  return taps;
}

}  // namespace

template <std::floating_point T>
Tensor<T> bilinear_resize(const Tensor<T>& x, std::size_t out_h,
                          std::size_t out_w, bool align_corners) {
  require(x.rank() >= 2, "bilinear_resize expects rank >= 2");
  if (out_h == 0 || out_w == 0) {
    throw ContractError("bilinear_resize output size must be >= 1");
  }
  const std::size_t h = x.dim(x.rank() - 2), w = x.dim(x.rank() - 1);
  const std::size_t planes = plane_count(x.shape());
  const auto ty = bilinear_taps(h, out_h, align_corners);
  const auto tx = bilinear_taps(w, out_w, align_corners);
  Shape shape = x.shape();
  shape[shape.size() - 2] = out_h;
  shape[shape.size() - 1] = out_w;
  std::vector<T> out(planes * out_h * out_w);
  const T* src = x.data().data();
  for (std::size_t p = 0; p < planes; ++p) {
    const T* in = src + p * h * w;
    T* o = out.data() + p * out_h * out_w;
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      const Tap& a = ty[oy];
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        const Tap& b = tx[ox];
        const double v = a.w0 * (b.w0 * in[a.i0 * w + b.i0] + b.w1 * in[a.i0 * w + b.i1]) +
                         a.w1 * (b.w0 * in[a.i1 * w + b.i0] + b.w1 * in[a.i1 * w + b.i1]);
        o[oy * out_w + ox] = static_cast<T>(v);
      }
    }
  }
  auto xn = x.node();
  return finish<T>("bilinear_resize", std::move(shape), std::move(out),
                   needs_record({&x}),
                   [xn, ty, tx, planes, h, w, out_h, out_w](std::span<const T> g,
                                                            std::span<const T>) {
                     auto gx = xn->grad_buffer();
                     for (std::size_t p = 0; p < planes; ++p) {
                       T* gi = gx.data() + p * h * w;
                       const T* go = g.data() + p * out_h * out_w;
                       for (std::size_t oy = 0; oy < out_h; ++oy) {
                         const Tap& a = ty[oy];
                         for (std::size_t ox = 0; ox < out_w; ++ox) {
                           const Tap& b = tx[ox];
                           const double v = go[oy * out_w + ox];
                           gi[a.i0 * w + b.i0] += static_cast<T>(v * a.w0 * b.w0);
                           gi[a.i0 * w + b.i1] += static_cast<T>(v * a.w0 * b.w1);
                           gi[a.i1 * w + b.i0] += static_cast<T>(v * a.w1 * b.w0);
                           gi[a.i1 * w + b.i1] += static_cast<T>(v * a.w1 * b.w1);
                         }
                       }
                     }
                   });
}

template <std::floating_point T>
Tensor<T> upsample_nearest2x(const Tensor<T>& x) {
  require(x.rank() >= 2, "upsample_nearest2x expects rank >= 2");
  const std::size_t h = x.dim(x.rank() - 2), w = x.dim(x.rank() - 1);
  const std::size_t planes = plane_count(x.shape());
  Shape shape = x.shape();
  shape[shape.size() - 2] = 2 * h;
  shape[shape.size() - 1] = 2 * w;
  std::vector<T> out(planes * 4 * h * w);
  const T* src = x.data().data();
  for (std::size_t p = 0; p < planes; ++p) {
    const T* in = src + p * h * w;
    T* o = out.data() + p * 4 * h * w;
    for (std::size_t y = 0; y < 2 * h; ++y)
      for (std::size_t xx = 0; xx < 2 * w; ++xx)
        o[y * 2 * w + xx] = in[(y / 2) * w + xx / 2];
  }
  auto xn = x.node();
  return finish<T>("upsample_nearest2x", std::move(shape), std::move(out),
                   needs_record({&x}),
                   [xn, planes, h, w](std::span<const T> g, std::span<const T>) {
                     auto gx = xn->grad_buffer();
                     for (std::size_t p = 0; p < planes; ++p) {
                       T* gi = gx.data() + p * h * w;
                       const T* go = g.data() + p * 4 * h * w;
                       for (std::size_t y = 0; y < 2 * h; ++y)
                         for (std::size_t xx = 0; xx < 2 * w; ++xx)
                           gi[(y / 2) * w + xx / 2] += go[y * 2 * w + xx];
                     }
                   });
}

template <std::floating_point T>
Tensor<T> avg_pool2x(const Tensor<T>& x) {
  require(x.rank() >= 2, "avg_pool2x expects rank >= 2");
  const std::size_t h = x.dim(x.rank() - 2), w = x.dim(x.rank() - 1);
  require(h % 2 == 0 && w % 2 == 0,
          "avg_pool2x expects even spatial size, got " + to_string(x.shape()));
  const std::size_t oh = h / 2, ow = w / 2;
  const std::size_t planes = plane_count(x.shape());
  Shape shape = x.shape();
  shape[shape.size() - 2] = oh;
  shape[shape.size() - 1] = ow;
  std::vector<T> out(planes * oh * ow);
  const T* src = x.data().data();
  for (std::size_t p = 0; p < planes; ++p) {
    const T* in = src + p * h * w;
    T* o = out.data() + p * oh * ow;
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xx = 0; xx < ow; ++xx)
        o[y * ow + xx] = T(0.25) * (in[2 * y * w + 2 * xx] + in[2 * y * w + 2 * xx + 1] +
                                    in[(2 * y + 1) * w + 2 * xx] +
                                    in[(2 * y + 1) * w + 2 * xx + 1]);
  }
  auto xn = x.node();
  return finish<T>("avg_pool2x", std::move(shape), std::move(out),
                   needs_record({&x}),
                   [xn, planes, h, w, oh, ow](std::span<const T> g,
                                              std::span<const T>) {
                     auto gx = xn->grad_buffer();
                     for (std::size_t p = 0; p < planes; ++p) {
                       T* gi = gx.data() + p * h * w;
                       const T* go = g.data() + p * oh * ow;
                       for (std::size_t y = 0; y < h; ++y)
                         for (std::size_t xx = 0; xx < w; ++xx)
                           gi[y * w + xx] += T(0.25) * go[(y / 2) * ow + xx / 2];
                     }
                   });
}

template <std::floating_point T>
Tensor<T> pad2d(const Tensor<T>& x, std::size_t out_h, std::size_t out_w,
                std::size_t top, std::size_t left) {
  require(x.rank() >= 2, "pad2d expects rank >= 2");
  const std::size_t h = x.dim(x.rank() - 2), w = x.dim(x.rank() - 1);
  require(top + h <= out_h && left + w <= out_w,
          "pad2d patch " + to_string(x.shape()) + " does not fit canvas");
  const std::size_t planes = plane_count(x.shape());
  Shape shape = x.shape();
  shape[shape.size() - 2] = out_h;
  shape[shape.size() - 1] = out_w;
  std::vector<T> out(planes * out_h * out_w, T(0));
  const T* src = x.data().data();
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t y = 0; y < h; ++y)
      std::copy_n(src + p * h * w + y * w, w,
                  out.data() + p * out_h * out_w + (top + y) * out_w + left);
  auto xn = x.node();
  return finish<T>("pad2d", std::move(shape), std::move(out), needs_record({&x}),
                   [xn, planes, h, w, out_h, out_w, top, left](
                       std::span<const T> g, std::span<const T>) {
                     auto gx = xn->grad_buffer();
                     for (std::size_t p = 0; p < planes; ++p)
                       for (std::size_t y = 0; y < h; ++y)
                         for (std::size_t xx = 0; xx < w; ++xx)
                           gx[p * h * w + y * w + xx] +=
                               g[p * out_h * out_w + (top + y) * out_w + left + xx];
                   });
}

template <std::floating_point T>
Tensor<T> roi_align(const Tensor<T>& feature, const RoiBox& box, std::size_t k) {
  require(feature.rank() == 3, "roi_align expects [C x H x W], got " +
                                   to_string(feature.shape()));
  if (k == 0 || !(box.x1 > box.x0) || !(box.y1 > box.y0)) {
    throw ContractError("roi_align needs k >= 1 and a non-empty box");
  }
  const std::size_t c = feature.dim(0), h = feature.dim(1), w = feature.dim(2);
  auto axis_taps = [k](double lo, double hi, std::size_t n) {
    std::vector<Tap> taps(k);
    const double bin = (hi - lo) / static_cast<double>(k);
    for (std::size_t j = 0; j < k; ++j) {
      double s = lo + (static_cast<double>(j) + 0.5) * bin - 0.5;
      s = std::clamp(s, 0.0, static_cast<double>(n - 1));
      auto i0 = static_cast<std::size_t>(std::floor(s));
      const std::size_t i1 = std::min(i0 + 1, n - 1);
      const double f = s - static_cast<double>(i0);
      taps[j] = Tap{i0, i1, 1.0 - f, f};
    }
    return taps;
  };
  const auto ty = axis_taps(box.y0, box.y1, h);
  const auto tx = axis_taps(box.x0, box.x1, w);
  std::vector<T> out(c * k * k);
  const T* src = feature.data().data();
  for (std::size_t ch = 0; ch < c; ++ch) {
    const T* in = src + ch * h * w;
    for (std::size_t a = 0; a < k; ++a)
      for (std::size_t b = 0; b < k; ++b) {
        const Tap& p = ty[a];
        const Tap& q = tx[b];
        out[(ch * k + a) * k + b] = static_cast<T>(
            p.w0 * (q.w0 * in[p.i0 * w + q.i0] + q.w1 * in[p.i0 * w + q.i1]) +
            p.w1 * (q.w0 * in[p.i1 * w + q.i0] + q.w1 * in[p.i1 * w + q.i1]));
      }
  }
  auto fn = feature.node();
  return finish<T>("roi_align", {c, k, k}, std::move(out), needs_record({&feature}),
                   [fn, ty, tx, c, h, w, k](std::span<const T> g, std::span<const T>) {
                     auto gf = fn->grad_buffer();
                     for (std::size_t ch = 0; ch < c; ++ch) {
                       T* gi = gf.data() + ch * h * w;
                       for (std::size_t a = 0; a < k; ++a)
                         for (std::size_t b = 0; b < k; ++b) {
                           const Tap& p = ty[a];
                           const Tap& q = tx[b];
                           const double v = g[(ch * k + a) * k + b];
                           gi[p.i0 * w + q.i0] += static_cast<T>(v * p.w0 * q.w0);
                           gi[p.i0 * w + q.i1] += static_cast<T>(v * p.w0 * q.w1);
                           gi[p.i1 * w + q.i0] += static_cast<T>(v * p.w1 * q.w0);
                           gi[p.i1 * w + q.i1] += static_cast<T>(v * p.w1 * q.w1);
                         }
                     }
                   });
}

// ---------------------------------------------------------------------------
// Elementwise unary

namespace {

// f computes the value; df computes the derivative from (input, output).
template <typename T, typename F, typename DF>
Tensor<T> unary(std::string_view op, const Tensor<T>& x, F f, DF df) {
  std::vector<T> out(x.numel());
  const auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(in[i]);
  auto xn = x.node();
  return finish<T>(op, x.shape(), std::move(out), needs_record({&x}),
                   [xn, df](std::span<const T> g, std::span<const T> o) {
                     auto gx = xn->grad_buffer();
                     for (std::size_t i = 0; i < gx.size(); ++i)
                       gx[i] += g[i] * df(xn->data[i], o[i]);
                   });
}

}  // namespace

template <std::floating_point T>
Tensor<T> relu(const Tensor<T>& x) {
  return unary<T>(
      "relu", x, [](T v) { return v > T(0) ? v : T(0); },
      [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <std::floating_point T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return unary<T>(
      "sigmoid", x,
      [](T v) {
        if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
        const T e = std::exp(v);
        return e / (T(1) + e);
      },
      [](T, T o) { return o * (T(1) - o); });
}

template <std::floating_point T>
Tensor<T> tanh(const Tensor<T>& x) {
  return unary<T>(
      "tanh", x, [](T v) { return std::tanh(v); },
      [](T, T o) { return T(1) - o * o; });
}

template <std::floating_point T>
Tensor<T> sqrt(const Tensor<T>& x) {
  return unary<T>(
      "sqrt", x, [](T v) { return std::sqrt(v); },
      [](T, T o) { return T(0.5) / o; });
}

template <std::floating_point T>
Tensor<T> square(const Tensor<T>& x) {
  return unary<T>(
      "square", x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

template <std::floating_point T>
Tensor<T> abs(const Tensor<T>& x) {
  return unary<T>(
      "abs", x, [](T v) { return std::abs(v); },
      [](T v, T) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
}

template <std::floating_point T>
Tensor<T> reciprocal(const Tensor<T>& x) {
  return unary<T>(
      "reciprocal", x, [](T v) { return T(1) / v; },
      [](T, T o) { return -o * o; });
}

template <std::floating_point T>
Tensor<T> add_scalar(const Tensor<T>& x, double c) {
  const T cv = static_cast<T>(c);
  return unary<T>(
      "add_scalar", x, [cv](T v) { return v + cv; }, [](T, T) { return T(1); });
}

template <std::floating_point T>
Tensor<T> scale(const Tensor<T>& x, double c) {
  const T cv = static_cast<T>(c);
  return unary<T>(
      "scale", x, [cv](T v) { return v * cv; }, [cv](T, T) { return cv; });
}

// ---------------------------------------------------------------------------
// Elementwise binary with limited broadcasting

namespace {

enum class Broadcast { kNone, kScalar, kChannel };

struct BinaryLayout {
  Broadcast kind;
  std::size_t channels = 1;
  std::size_t inner = 1;  // elements per channel run
};

template <typename T>
BinaryLayout binary_layout(std::string_view op, const Tensor<T>& a,
                           const Tensor<T>& b) {
  if (a.shape() == b.shape()) return {Broadcast::kNone};
  if (b.numel() == 1) return {Broadcast::kScalar};
  if (b.rank() == 1 && a.rank() >= 2 && a.dim(1) == b.dim(0)) {
    std::size_t inner = 1;
    for (std::size_t i = 2; i < a.rank(); ++i) inner *= a.dim(i);
    return {Broadcast::kChannel, b.dim(0), inner};
  }
  throw DimensionError(std::string(op) + ": incompatible broadcast " +
                       to_string(a.shape()) + " vs " + to_string(b.shape()));
}

inline std::size_t b_index(const BinaryLayout& l, std::size_t i) {
  switch (l.kind) {
    case Broadcast::kNone: return i;
    case Broadcast::kScalar: return 0;
    case Broadcast::kChannel: return (i / l.inner) % l.channels;
  }
  return 0;
}

// df returns (d/da, d/db) given (a, b).
template <typename T, typename F, typename DF>
Tensor<T> binary(std::string_view op, const Tensor<T>& a, const Tensor<T>& b,
                 F f, DF df) {
  const BinaryLayout l = binary_layout(op, a, b);
  std::vector<T> out(a.numel());
  const auto av = a.data();
  const auto bv = b.data();
  if (l.kind == Broadcast::kNone) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(av[i], bv[i]);
  } else {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(av[i], bv[b_index(l, i)]);
  }
  auto an = a.node();
  auto bn = b.node();
  return finish<T>(op, a.shape(), std::move(out), needs_record({&a, &b}),
                   [an, bn, l, df](std::span<const T> g, std::span<const T>) {
                     const bool need_a = an->requires_grad;
                     const bool need_b = bn->requires_grad;
                     std::span<T> ga, gb;
                     if (need_a) ga = an->grad_buffer();
                     if (need_b) gb = bn->grad_buffer();
                     for (std::size_t i = 0; i < g.size(); ++i) {
                       const std::size_t j = b_index(l, i);
                       const auto [da, db] = df(an->data[i], bn->data[j]);
                       if (need_a) ga[i] += g[i] * da;
                       if (need_b) gb[j] += g[i] * db;
                     }
                   });
}

}  // namespace

template <std::floating_point T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary<T>(
      "add", a, b, [](T x, T y) { return x + y; },
      [](T, T) { return std::pair<T, T>{T(1), T(1)}; });
}

template <std::floating_point T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary<T>(
      "sub", a, b, [](T x, T y) { return x - y; },
      [](T, T) { return std::pair<T, T>{T(1), T(-1)}; });
}

template <std::floating_point T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary<T>(
      "mul", a, b, [](T x, T y) { return x * y; },
      [](T x, T y) { return std::pair<T, T>{y, x}; });
}

template <std::floating_point T>
Tensor<T> blend(const Tensor<T>& a, const Tensor<T>& b, const Tensor<T>& alpha) {
  require(a.shape() == b.shape(), "blend shape mismatch: " + to_string(a.shape()) +
                                      " vs " + to_string(b.shape()));
  require(alpha.numel() == 1, "blend expects a one-element alpha");
  const T t = alpha.data()[0];
  const T s = T(1) - t;
  std::vector<T> out(a.numel());
  const auto av = a.data();
  const auto bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = s * av[i] + t * bv[i];
  auto an = a.node();
  auto bn = b.node();
  auto tn = alpha.node();
  return finish<T>("blend", a.shape(), std::move(out),
                   needs_record({&a, &b, &alpha}),
                   [an, bn, tn, s, t](std::span<const T> g, std::span<const T>) {
                     if (an->requires_grad) {
                       auto ga = an->grad_buffer();
                       for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
                     }
                     if (bn->requires_grad) {
                       auto gb = bn->grad_buffer();
                       for (std::size_t i = 0; i < g.size(); ++i) gb[i] += t * g[i];
                     }
                     if (tn->requires_grad) {
                       T acc = T(0);
                       for (std::size_t i = 0; i < g.size(); ++i)
                         acc += g[i] * (bn->data[i] - an->data[i]);
                       tn->grad_buffer()[0] += acc;
                     }
                   });
}

// ---------------------------------------------------------------------------
// Reductions and shape manipulation

template <std::floating_point T>
Tensor<T> sum(const Tensor<T>& x) {
  T acc = T(0);
  for (const T v : x.data()) acc += v;
  auto xn = x.node();
  return finish<T>("sum", {1}, {acc}, needs_record({&x}),
                   [xn](std::span<const T> g, std::span<const T>) {
                     auto gx = xn->grad_buffer();
                     for (auto& v : gx) v += g[0];
                   });
}

template <std::floating_point T>
Tensor<T> mean(const Tensor<T>& x) {
  if (x.numel() == 0) throw DimensionError("mean of an empty tensor");
  T acc = T(0);
  for (const T v : x.data()) acc += v;
  const T inv = T(1) / static_cast<T>(x.numel());
  auto xn = x.node();
  return finish<T>("mean", {1}, {acc * inv}, needs_record({&x}),
                   [xn, inv](std::span<const T> g, std::span<const T>) {
                     auto gx = xn->grad_buffer();
                     for (auto& v : gx) v += g[0] * inv;
                   });
}

template <std::floating_point T>
Tensor<T> l1_norm(const Tensor<T>& x) {
  T acc = T(0);
  for (const T v : x.data()) acc += std::abs(v);
  auto xn = x.node();
  return finish<T>("l1_norm", {1}, {acc}, needs_record({&x}),
                   [xn](std::span<const T> g, std::span<const T>) {
                     auto gx = xn->grad_buffer();
                     for (std::size_t i = 0; i < gx.size(); ++i) {
                       const T v = xn->data[i];
                       gx[i] += v > T(0) ? g[0] : (v < T(0) ? -g[0] : T(0));
                     }
                   });
}

template <std::floating_point T>
Tensor<T> reduce_sum(const Tensor<T>& x, std::size_t axis) {
  require(axis < x.rank(), "reduce_sum axis out of range for " + to_string(x.shape()));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  const std::size_t n = x.dim(axis);
  Shape shape;
  for (std::size_t i = 0; i < x.rank(); ++i)
    if (i != axis) shape.push_back(x.dim(i));
  if (shape.empty()) shape.push_back(1);
  std::vector<T> out(outer * inner, T(0));
  const auto in = x.data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t i = 0; i < inner; ++i)
        out[o * inner + i] += in[(o * n + a) * inner + i];
  auto xn = x.node();
  return finish<T>("reduce_sum", std::move(shape), std::move(out),
                   needs_record({&x}),
                   [xn, outer, inner, n](std::span<const T> g, std::span<const T>) {
                     auto gx = xn->grad_buffer();
                     for (std::size_t o = 0; o < outer; ++o)
                       for (std::size_t a = 0; a < n; ++a)
                         for (std::size_t i = 0; i < inner; ++i)
                           gx[(o * n + a) * inner + i] += g[o * inner + i];
                   });
}

template <std::floating_point T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  require(numel(shape) == x.numel(), "reshape " + to_string(x.shape()) + " to " +
                                         to_string(shape) + " changes size");
  auto xn = x.node();
  return finish<T>("reshape", std::move(shape),
                   std::vector<T>(x.data().begin(), x.data().end()),
                   needs_record({&x}),
                   [xn](std::span<const T> g, std::span<const T>) {
                     auto gx = xn->grad_buffer();
                     for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i];
                   });
}

template <std::floating_point T>
Tensor<T> concat(std::span<const Tensor<T>> parts, std::size_t axis) {
  if (parts.empty()) throw ContractError("concat of zero tensors");
  const Shape& ref = parts[0].shape();
  require(axis < ref.size(), "concat axis out of range for " + to_string(ref));
  std::size_t total = 0;
  for (const auto& p : parts) {
    require(p.rank() == ref.size(), "concat rank mismatch: " + to_string(ref) +
                                        " vs " + to_string(p.shape()));
    for (std::size_t i = 0; i < ref.size(); ++i) {
      if (i != axis) {
        require(p.dim(i) == ref[i], "concat shape mismatch: " + to_string(ref) +
                                        " vs " + to_string(p.shape()));
      }
    }
    total += p.dim(axis);
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= ref[i];
  for (std::size_t i = axis + 1; i < ref.size(); ++i) inner *= ref[i];
  Shape shape = ref;
  shape[axis] = total;
  std::vector<T> out(outer * total * inner);
  std::vector<std::shared_ptr<detail::Node<T>>> nodes;
  std::vector<std::size_t> widths;
  bool record = false;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t run = p.dim(axis) * inner;
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(p.data().data() + o * run, run,
                  out.data() + o * total * inner + offset);
    offset += run;
    nodes.push_back(p.node());
    widths.push_back(run);
    record = record || needs_record({&p});
  }
  return finish<T>("concat", std::move(shape), std::move(out), record,
                   [nodes, widths, outer, total, inner](std::span<const T> g,
                                                        std::span<const T>) {
                     std::size_t off = 0;
                     for (std::size_t k = 0; k < nodes.size(); ++k) {
                       const std::size_t run = widths[k];
                       if (nodes[k]->requires_grad) {
                         auto gp = nodes[k]->grad_buffer();
                         for (std::size_t o = 0; o < outer; ++o)
                           for (std::size_t i = 0; i < run; ++i)
                             gp[o * run + i] += g[o * total * inner + off + i];
                       }
                       off += run;
                     }
                   });
}

template <std::floating_point T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t begin,
                std::size_t end) {
  require(axis < x.rank() && begin < end && end <= x.dim(axis),
          "slice [" + std::to_string(begin) + ", " + std::to_string(end) +
              ") on axis " + std::to_string(axis) + " of " + to_string(x.shape()));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  const std::size_t n = x.dim(axis);
  const std::size_t run = (end - begin) * inner;
  Shape shape = x.shape();
  shape[axis] = end - begin;
  std::vector<T> out(outer * run);
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(x.data().data() + (o * n + begin) * inner, run, out.data() + o * run);
  auto xn = x.node();
  return finish<T>("slice", std::move(shape), std::move(out), needs_record({&x}),
                   [xn, outer, inner, n, begin, run](std::span<const T> g,
                                                     std::span<const T>) {
                     auto gx = xn->grad_buffer();
                     for (std::size_t o = 0; o < outer; ++o)
                       for (std::size_t i = 0; i < run; ++i)
                         gx[(o * n + begin) * inner + i] += g[o * run + i];
                   });
}

// ---------------------------------------------------------------------------

template <std::floating_point T>
BatchStats<T> batch_stats(const Tensor<T>& x, double eps) {
  require(x.rank() >= 2 && x.numel() > 0,
          "batch_stats expects a non-empty [N x C x ...] tensor, got " +
              to_string(x.shape()));
  const std::size_t n = x.dim(0), c = x.dim(1);
  const std::size_t inner = x.numel() / (n * c);
  const double count = static_cast<double>(n * inner);
  // [N, C, P] -> per-channel sums via two reductions.
  auto per_channel_mean = [&](const Tensor<T>& t) {
    auto flat = reshape(t, {n, c, inner});
    return scale(reduce_sum(reduce_sum(flat, 2), 0), 1.0 / count);
  };
  Tensor<T> mu = per_channel_mean(x);
  Tensor<T> centered = sub(x, mu);
  Tensor<T> var = per_channel_mean(square(centered));
  Tensor<T> sigma = sqrt(add_scalar(var, eps));
  return {mu, sigma};
}

template <std::floating_point T>
Tensor<T> standardize(const Tensor<T>& x, double eps) {
  const auto stats = batch_stats(x, eps);
  return mul(sub(x, stats.mean), reciprocal(stats.sigma));
}

template <std::floating_point T>
Tensor<T> masked_affine_field(const Tensor<T>& masks, const Tensor<T>& values,
                              std::span<const std::int32_t> occupancy,
                              double floor) {
  require(masks.rank() == 3 && values.rank() == 2 && masks.dim(0) == values.dim(0),
          "masked_affine_field shapes: masks " + to_string(masks.shape()) +
              " values " + to_string(values.shape()));
  const std::size_t m = masks.dim(0), h = masks.dim(1), w = masks.dim(2);
  const std::size_t c = values.dim(1), p = h * w;
  require(occupancy.size() == p, "masked_affine_field occupancy size mismatch");
  const auto mv = masks.data();
  std::vector<T> den(p, T(1));
  std::vector<std::uint8_t> active(p, 0);
  for (std::size_t q = 0; q < p; ++q) {
    if (occupancy[q] > 1) {
      T s = T(0);
      for (std::size_t i = 0; i < m; ++i) s += mv[i * p + q];
      if (s >= static_cast<T>(floor)) {
        den[q] = s;
        active[q] = 1;
      } else {
        den[q] = static_cast<T>(floor);
      }
    }
  }
  std::vector<T> out(c * p, T(0));
  gemm_tn(c, p, m, values.data().data(), c, mv.data(), p, out.data(), p);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t q = 0; q < p; ++q) out[ch * p + q] /= den[q];
  auto mn = masks.node();
  auto vn = values.node();
  return finish<T>(
      "masked_affine_field", {c, h, w}, std::move(out),
      needs_record({&masks, &values}),
      [mn, vn, den, active, m, c, p](std::span<const T> g, std::span<const T> o) {
        std::vector<T> gd(c * p);
        for (std::size_t ch = 0; ch < c; ++ch)
          for (std::size_t q = 0; q < p; ++q) gd[ch * p + q] = g[ch * p + q] / den[q];
        if (vn->requires_grad) {
          // d values[i,c] = sum_q gd[c,q] * masks[i,q]
          auto gv = vn->grad_buffer();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t ch = 0; ch < c; ++ch) {
              T acc = T(0);
              const T* mrow = mn->data.data() + i * p;
              const T* grow = gd.data() + ch * p;
              for (std::size_t q = 0; q < p; ++q) acc += grow[q] * mrow[q];
              gv[i * c + ch] += acc;
            }
        }
        if (mn->requires_grad) {
          auto gm = mn->grad_buffer();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t ch = 0; ch < c; ++ch) {
              const T t = vn->data[i * c + ch];
              const T* grow = gd.data() + ch * p;
              const T* orow = o.data() + ch * p;
              T* gmrow = gm.data() + i * p;
              for (std::size_t q = 0; q < p; ++q)
                gmrow[q] += grow[q] * (active[q] ? t - orow[q] : t);
            }
        }
      });
}

template <std::floating_point T>
Tensor<T> spectral_scale(const Tensor<T>& weight, std::span<const T> u,
                         std::span<const T> v) {
  require(weight.rank() >= 1, "spectral_scale expects rank >= 1");
  const std::size_t rows = weight.dim(0);
  const std::size_t cols = rows ? weight.numel() / rows : 0;
  require(u.size() == rows && v.size() == cols,
          "spectral_scale vector sizes do not match " + to_string(weight.shape()));
  const auto wv = weight.data();
  double sigma = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = 0;
    for (std::size_t q = 0; q < cols; ++q) acc += double(wv[r * cols + q]) * v[q];
    sigma += double(u[r]) * acc;
  }
  constexpr double kFloor = 1e-12;
  const bool floored = sigma < kFloor;
  const T s = static_cast<T>(floored ? kFloor : sigma);
  std::vector<T> out(weight.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = wv[i] / s;
  auto wn = weight.node();
  std::vector<T> uc(u.begin(), u.end()), vc(v.begin(), v.end());
  return finish<T>("spectral_scale", weight.shape(), std::move(out),
                   needs_record({&weight}),
                   [wn, uc, vc, s, floored, rows, cols](std::span<const T> g,
                                                        std::span<const T>) {
                     auto gw = wn->grad_buffer();
                     T dot = T(0);
                     for (std::size_t i = 0; i < g.size(); ++i) dot += g[i] * wn->data[i];
                     const T coef = floored ? T(0) : dot / (s * s);
                     for (std::size_t r = 0; r < rows; ++r)
                       for (std::size_t q = 0; q < cols; ++q)
                         gw[r * cols + q] += g[r * cols + q] / s - coef * uc[r] * vc[q];
                   });
}

// ---------------------------------------------------------------------------

#define LAYOUTSYNTH_INSTANTIATE_OPS(T)                                             \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                   \
  template Tensor<T> transpose(const Tensor<T>&);                                  \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, std::size_t,       \
                            std::size_t);                                          \
  template Tensor<T> bilinear_resize(const Tensor<T>&, std::size_t, std::size_t,   \
                                     bool);                                        \
  template Tensor<T> upsample_nearest2x(const Tensor<T>&);                         \
  template Tensor<T> avg_pool2x(const Tensor<T>&);                                 \
  template Tensor<T> pad2d(const Tensor<T>&, std::size_t, std::size_t,             \
                           std::size_t, std::size_t);                              \
  template Tensor<T> roi_align(const Tensor<T>&, const RoiBox&, std::size_t);      \
  template Tensor<T> relu(const Tensor<T>&);                                       \
  template Tensor<T> sigmoid(const Tensor<T>&);                                    \
  template Tensor<T> tanh(const Tensor<T>&);                                       \
  template Tensor<T> sqrt(const Tensor<T>&);                                       \
  template Tensor<T> square(const Tensor<T>&);                                     \
  template Tensor<T> abs(const Tensor<T>&);                                        \
  template Tensor<T> reciprocal(const Tensor<T>&);                                 \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                      \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                      \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                      \
  template Tensor<T> add_scalar(const Tensor<T>&, double);                         \
  template Tensor<T> scale(const Tensor<T>&, double);                              \
  template Tensor<T> blend(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);  \
  template Tensor<T> sum(const Tensor<T>&);                                        \
  template Tensor<T> mean(const Tensor<T>&);                                       \
  template Tensor<T> l1_norm(const Tensor<T>&);                                    \
  template Tensor<T> reduce_sum(const Tensor<T>&, std::size_t);                    \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                             \
  template Tensor<T> concat(std::span<const Tensor<T>>, std::size_t);              \
  template Tensor<T> slice(const Tensor<T>&, std::size_t, std::size_t,             \
                           std::size_t);                                           \
  template BatchStats<T> batch_stats(const Tensor<T>&, double);                    \
  template Tensor<T> standardize(const Tensor<T>&, double);                        \
  template Tensor<T> masked_affine_field(const Tensor<T>&, const Tensor<T>&,       \
                                         std::span<const std::int32_t>, double);   \
  template Tensor<T> spectral_scale(const Tensor<T>&, std::span<const T>,          \
                                    std::span<const T>);

LAYOUTSYNTH_INSTANTIATE_OPS(float)
LAYOUTSYNTH_INSTANTIATE_OPS(double)

#undef LAYOUTSYNTH_INSTANTIATE_OPS

}  // namespace layoutsynth
