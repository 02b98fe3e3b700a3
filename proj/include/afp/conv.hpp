// Spatial operators: conv2d (im2col + GEMM), align-corners bilinear resize
// and a fixed separable depthwise filter.

#pragma once

#include <Eigen/Core>

#include "afp/tensor.hpp"

namespace afp {

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const RowMat<T>>;

// dst (+)= a * b. Matrix-vector shapes take a fixed-order loop: Eigen's
// vector kernels peel by the runtime address, so their rounding would depend
// on where the allocator put the buffers.
template <typename Dst, typename A, typename B>
void gemm(Dst&& dst, const A& a, const B& b, bool accumulate) {
  if (dst.rows() == 1 || dst.cols() == 1) {
    using T = typename std::decay_t<Dst>::Scalar;
    for (Eigen::Index i = 0; i < dst.rows(); ++i)
      for (Eigen::Index j = 0; j < dst.cols(); ++j) {
        T acc = 0;
        for (Eigen::Index k = 0; k < a.cols(); ++k) acc += a(i, k) * b(k, j);
        dst(i, j) = accumulate ? dst(i, j) + acc : acc;
      }
  } else if (accumulate) {
    dst.noalias() += a * b;
  } else {
    dst.noalias() = a * b;
  }
}

struct ConvGeom {
  std::size_t C, H, W, O, kh, kw, stride, pad, Ho, Wo;
  std::size_t K() const { return C * kh * kw; }
  std::size_t N() const { return Ho * Wo; }
  bool is_pointwise() const { return kh == 1 && kw == 1 && stride == 1 && pad == 0; }
};

// Output columns [lo, hi) whose input column ox*stride + kx - pad is in range.
inline std::pair<std::size_t, std::size_t> valid_span(const ConvGeom& g, std::size_t k, std::size_t in,
                                                      std::size_t out) {
  const long s = static_cast<long>(g.stride), off = static_cast<long>(k) - static_cast<long>(g.pad);
  long lo = off >= 0 ? 0 : (-off + s - 1) / s;
  long hi = (static_cast<long>(in) - 1 - off) / s + 1;
  if (static_cast<long>(in) - 1 - off < 0) hi = 0;
  lo = std::min<long>(lo, static_cast<long>(out));
  hi = std::clamp<long>(hi, lo, static_cast<long>(out));
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

template <typename T>
void im2col(const T* x, const ConvGeom& g, T* cols) {
  const std::size_t N = g.N();
  for (std::size_t c = 0; c < g.C; ++c)
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      const auto [ylo, yhi] = valid_span(g, ky, g.H, g.Ho);
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        const auto [xlo, xhi] = valid_span(g, kx, g.W, g.Wo);
        T* row = cols + ((c * g.kh + ky) * g.kw + kx) * N;
        std::fill_n(row, ylo * g.Wo, T(0));
        for (std::size_t oy = ylo; oy < yhi; ++oy) {
          const std::size_t iy = oy * g.stride + ky - g.pad;
          T* out = row + oy * g.Wo;
          const T* in = x + (c * g.H + iy) * g.W;
          std::fill_n(out, xlo, T(0));
          if (g.stride == 1) {
            std::copy_n(in + (xlo + kx - g.pad), xhi - xlo, out + xlo);
          } else {
            for (std::size_t ox = xlo; ox < xhi; ++ox) out[ox] = in[ox * g.stride + kx - g.pad];
          }
          std::fill(out + xhi, out + g.Wo, T(0));
        }
        std::fill(row + yhi * g.Wo, row + N, T(0));
      }
    }
}

template <typename T>
void col2im_add(const T* cols, const ConvGeom& g, T* dx) {
  const std::size_t N = g.N();
  for (std::size_t c = 0; c < g.C; ++c)
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      const auto [ylo, yhi] = valid_span(g, ky, g.H, g.Ho);
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        const auto [xlo, xhi] = valid_span(g, kx, g.W, g.Wo);
        const T* row = cols + ((c * g.kh + ky) * g.kw + kx) * N;
        for (std::size_t oy = ylo; oy < yhi; ++oy) {
          const std::size_t iy = oy * g.stride + ky - g.pad;
          T* out = dx + (c * g.H + iy) * g.W;
          const T* in = row + oy * g.Wo;
          if (g.stride == 1) {
            T* o = out + (xlo + kx - g.pad);
            for (std::size_t ox = xlo; ox < xhi; ++ox) o[ox - xlo] += in[ox];
          } else {
            for (std::size_t ox = xlo; ox < xhi; ++ox) out[ox * g.stride + kx - g.pad] += in[ox];
          }
        }
      }
    }
}

}  // namespace detail

// input [C,H,W], kernel [O,C,kh,kw], bias [O] -> [O,H',W'] with
// H' = (H + 2*padding - kh) / stride + 1.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                 std::size_t stride = 1, std::size_t padding = 0) {
  detail::require_rank(input, 3, "conv2d input");
  detail::require_rank(kernel, 4, "conv2d kernel");
  if (kernel.dim(1) != input.dim(0))
    throw ShapeError("conv2d: kernel expects " + std::to_string(kernel.dim(1)) +
                     " input channels but input " + shape_str(input.shape()) + " has " +
                     std::to_string(input.dim(0)));
  if (bias.numel() != kernel.dim(0))
    throw ShapeError("conv2d: bias length " + std::to_string(bias.numel()) + " != out channels " +
                     std::to_string(kernel.dim(0)));
  if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
  detail::ConvGeom g{input.dim(0), input.dim(1), input.dim(2), kernel.dim(0), kernel.dim(2),
                     kernel.dim(3), stride, padding, 0, 0};
  if (g.kh > g.H + 2 * padding || g.kw > g.W + 2 * padding)
    throw ShapeError("conv2d: kernel larger than padded input " + shape_str(input.shape()));
  g.Ho = (g.H + 2 * padding - g.kh) / stride + 1;
  g.Wo = (g.W + 2 * padding - g.kw) / stride + 1;

  const std::size_t K = g.K(), N = g.N();
  auto cols = std::make_shared<std::vector<T>>();
  const T* col_ptr = input.data().data();
  if (!g.is_pointwise()) {
    cols->resize(K * N);
    detail::im2col(input.data().data(), g, cols->data());
    col_ptr = cols->data();
  }

  std::vector<T> y(g.O * N);
  {
    detail::MapMat<T> Y(y.data(), g.O, N);
    detail::CMapMat<T> Wm(kernel.data().data(), g.O, K);
    detail::CMapMat<T> X(col_ptr, K, N);
    detail::gemm(Y, Wm, X, false);
    for (std::size_t o = 0; o < g.O; ++o) Y.row(o).array() += bias[o];
  }

  auto pi = input.node(), pk = kernel.node(), pb = bias.node();
  return detail::make_result<T>(
      {g.O, g.Ho, g.Wo}, std::move(y), "conv2d", {pi, pk, pb},
      [pi, pk, pb, g, cols](detail::Node<T>& self) {
        const std::size_t K = g.K(), N = g.N();
        detail::CMapMat<T> G(self.grad.data(), g.O, N);
        const T* col_ptr = g.is_pointwise() ? pi->data.data() : cols->data();
        detail::CMapMat<T> X(col_ptr, K, N);
        if (pk->requires_grad) {
          detail::MapMat<T> dW(pk->ensure_grad().data(), g.O, K);
          detail::gemm(dW, G, X.transpose(), true);
        }
        if (pb->requires_grad) {
          auto& db = pb->ensure_grad();
          for (std::size_t o = 0; o < g.O; ++o) {
            T acc = 0;
            for (std::size_t n = 0; n < N; ++n) acc += self.grad[o * N + n];
            db[o] += acc;
          }
        }
        if (pi->requires_grad) {
          detail::CMapMat<T> Wm(pk->data.data(), g.O, K);
          auto& dx = pi->ensure_grad();
          if (g.is_pointwise()) {
            detail::MapMat<T> dX(dx.data(), K, N);
            detail::gemm(dX, Wm.transpose(), G, true);
          } else {
            std::vector<T> dcols(K * N);
            detail::MapMat<T> dC(dcols.data(), K, N);
            detail::gemm(dC, Wm.transpose(), G, false);
            detail::col2im_add(dcols.data(), g, dx.data());
          }
        }
      });
}

namespace detail {

// Align-corners source coordinate table for one axis.
struct LerpAxis {
  std::vector<std::size_t> lo, hi;
  std::vector<double> frac;
};

inline LerpAxis lerp_axis(std::size_t in, std::size_t out) {
  LerpAxis a;
  a.lo.resize(out);
  a.hi.resize(out);
  a.frac.resize(out);
  for (std::size_t i = 0; i < out; ++i) {
    const double src =
        out == 1 ? 0.0 : static_cast<double>(i) * static_cast<double>(in - 1) / static_cast<double>(out - 1);
    std::size_t lo = static_cast<std::size_t>(std::floor(src));
    if (lo > in - 1) lo = in - 1;
    a.lo[i] = lo;
    a.hi[i] = std::min(lo + 1, in - 1);
    a.frac[i] = src - static_cast<double>(lo);
  }
  return a;
}

}  // namespace detail

// Bilinear resize of [C,H,W] with align_corners = true: output corners map
// exactly onto input corners.
template <typename T>
Tensor<T> resize_bilinear(const Tensor<T>& input, std::size_t out_h, std::size_t out_w) {
  detail::require_rank(input, 3, "resize_bilinear");
  if (out_h < 1 || out_w < 1) throw std::invalid_argument("resize_bilinear: output size must be >= 1");
  const std::size_t C = input.dim(0), H = input.dim(1), W = input.dim(2);
  if (H == out_h && W == out_w) {
    auto pi = input.node();
    return detail::make_result<T>(input.shape(), input.vec(), "resize_bilinear", {pi},
                                  [pi](detail::Node<T>& self) {
                                    auto& g = pi->ensure_grad();
                                    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                                  });
  }
  auto ya = std::make_shared<detail::LerpAxis>(detail::lerp_axis(H, out_h));
  auto xa = std::make_shared<detail::LerpAxis>(detail::lerp_axis(W, out_w));
  std::vector<T> y(C * out_h * out_w);
  const auto& x = input.vec();
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < out_h; ++i) {
      const T fy = static_cast<T>(ya->frac[i]);
      const T* r0 = x.data() + (c * H + ya->lo[i]) * W;
      const T* r1 = x.data() + (c * H + ya->hi[i]) * W;
      T* out = y.data() + (c * out_h + i) * out_w;
      for (std::size_t j = 0; j < out_w; ++j) {
        const T fx = static_cast<T>(xa->frac[j]);
        const std::size_t l = xa->lo[j], h = xa->hi[j];
        const T top = r0[l] + fx * (r0[h] - r0[l]);
        const T bot = r1[l] + fx * (r1[h] - r1[l]);
        out[j] = top + fy * (bot - top);
      }
    }
  auto pi = input.node();
  return detail::make_result<T>(
      {C, out_h, out_w}, std::move(y), "resize_bilinear", {pi},
      [pi, ya, xa, C, H, W, out_h, out_w](detail::Node<T>& self) {
        auto& g = pi->ensure_grad();
        for (std::size_t c = 0; c < C; ++c)
          for (std::size_t i = 0; i < out_h; ++i) {
            const T fy = static_cast<T>(ya->frac[i]);
            T* r0 = g.data() + (c * H + ya->lo[i]) * W;
            T* r1 = g.data() + (c * H + ya->hi[i]) * W;
            const T* go = self.grad.data() + (c * out_h + i) * out_w;
            for (std::size_t j = 0; j < out_w; ++j) {
              const T fx = static_cast<T>(xa->frac[j]);
              const std::size_t l = xa->lo[j], h = xa->hi[j];
              const T gt = go[j] * (T(1) - fy), gb = go[j] * fy;
              r0[l] += gt * (T(1) - fx);
              r0[h] += gt * fx;
              r1[l] += gb * (T(1) - fx);
              r1[h] += gb * fx;
            }
          }
      });
}

// Correlates every channel with the separable kernel taps (x) taps, keeping
// only fully-covered positions ("valid" mode). Differentiable in the input.
template <typename T>
Tensor<T> separable_filter_valid(const Tensor<T>& input, const std::vector<T>& taps) {
  detail::require_rank(input, 3, "separable_filter_valid");
  const std::size_t C = input.dim(0), H = input.dim(1), W = input.dim(2), k = taps.size();
  if (k == 0 || H < k || W < k)
    throw ShapeError("separable_filter_valid: image " + shape_str(input.shape()) +
                     " is smaller than the " + std::to_string(k) + "x" + std::to_string(k) + " window");
  const std::size_t oh = H - k + 1, ow = W - k + 1;
  std::vector<T> tmp(C * H * ow), y(C * oh * ow);
  const auto& x = input.vec();
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < H; ++i)
      for (std::size_t j = 0; j < ow; ++j) {
        T s = 0;
        const T* src = x.data() + (c * H + i) * W + j;
        for (std::size_t t = 0; t < k; ++t) s += taps[t] * src[t];
        tmp[(c * H + i) * ow + j] = s;
      }
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j) {
        T s = 0;
        for (std::size_t t = 0; t < k; ++t) s += taps[t] * tmp[(c * H + i + t) * ow + j];
        y[(c * oh + i) * ow + j] = s;
      }
  auto pi = input.node();
  return detail::make_result<T>(
      {C, oh, ow}, std::move(y), "separable_filter_valid", {pi},
      [pi, taps, C, H, W, k, oh, ow](detail::Node<T>& self) {
        std::vector<T> gtmp(C * H * ow, T(0));
        for (std::size_t c = 0; c < C; ++c)
          for (std::size_t i = 0; i < oh; ++i)
            for (std::size_t j = 0; j < ow; ++j) {
              const T gv = self.grad[(c * oh + i) * ow + j];
              for (std::size_t t = 0; t < k; ++t) gtmp[(c * H + i + t) * ow + j] += taps[t] * gv;
            }
        auto& g = pi->ensure_grad();
        for (std::size_t c = 0; c < C; ++c)
          for (std::size_t i = 0; i < H; ++i)
            for (std::size_t j = 0; j < ow; ++j) {
              const T gv = gtmp[(c * H + i) * ow + j];
              T* dst = g.data() + (c * H + i) * W + j;
              for (std::size_t t = 0; t < k; ++t) dst[t] += taps[t] * gv;
            }
      });
}

}  // namespace afp
