// Backward warping by per-pixel flow and the two-frame voxel-flow blend.
//
// Frames are [C,H,W]; flows are [2,H,W] in pixels, channel 0 horizontal
// (positive right), channel 1 vertical (positive down). Weight maps are
// [1,H,W] in [0,1].

#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "afp/tensor.hpp"

namespace afp {

template <typename T>
using Frame = Tensor<T>;
template <typename T>
using FlowField = Tensor<T>;
template <typename T>
using WeightMap = Tensor<T>;

template <typename T>
void require_unit_range(const Tensor<T>& w, const char* what) {
  for (T v : w.data())
    if (!(v >= T(0) && v <= T(1)))
      throw std::domain_error(std::string(what) + ": weight map value " + std::to_string(v) +
                              " outside [0,1]");
}

// output(p) = bilinear sample of frame at p + flow(p); sample coordinates are
// clamped to the image, and clamped coordinates carry no flow gradient.
template <typename T>
Frame<T> warp(const Frame<T>& frame, const FlowField<T>& flow) {
  detail::require_rank(frame, 3, "warp frame");
  detail::require_rank(flow, 3, "warp flow");
  if (flow.dim(0) != 2 || flow.dim(1) != frame.dim(1) || flow.dim(2) != frame.dim(2))
    throw ShapeError("warp: flow " + shape_str(flow.shape()) + " does not match frame " +
                     shape_str(frame.shape()));
  const std::size_t C = frame.dim(0), H = frame.dim(1), W = frame.dim(2), P = H * W;
  const auto& src = frame.vec();
  const auto& fl = flow.vec();

  struct Sample {
    std::size_t x0, x1, y0, y1;
    T ax, ay;
    bool free_x, free_y;
  };
  auto samples = std::make_shared<std::vector<Sample>>(P);
  const T xmax = static_cast<T>(W - 1), ymax = static_cast<T>(H - 1);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      const std::size_t p = y * W + x;
      T sx = static_cast<T>(x) + fl[p];
      T sy = static_cast<T>(y) + fl[P + p];
      if (!std::isfinite(sx) || !std::isfinite(sy)) throw std::domain_error("warp: non-finite flow");
      Sample s{};
      s.free_x = sx >= T(0) && sx <= xmax;
      s.free_y = sy >= T(0) && sy <= ymax;
      sx = std::clamp(sx, T(0), xmax);
      sy = std::clamp(sy, T(0), ymax);
      s.x0 = static_cast<std::size_t>(std::floor(sx));
      s.y0 = static_cast<std::size_t>(std::floor(sy));
      s.x1 = std::min(s.x0 + 1, W - 1);
      s.y1 = std::min(s.y0 + 1, H - 1);
      s.ax = sx - static_cast<T>(s.x0);
      s.ay = sy - static_cast<T>(s.y0);
      (*samples)[p] = s;
    }

  std::vector<T> out(C * P);
  for (std::size_t c = 0; c < C; ++c) {
    const T* img = src.data() + c * P;
    for (std::size_t p = 0; p < P; ++p) {
      const auto& s = (*samples)[p];
      const T top = (T(1) - s.ax) * img[s.y0 * W + s.x0] + s.ax * img[s.y0 * W + s.x1];
      const T bot = (T(1) - s.ax) * img[s.y1 * W + s.x0] + s.ax * img[s.y1 * W + s.x1];
      out[c * P + p] = (T(1) - s.ay) * top + s.ay * bot;
    }
  }

  auto pf = frame.node(), pv = flow.node();
  return detail::make_result<T>(
      frame.shape(), std::move(out), "warp", {pf, pv},
      [pf, pv, samples, C, W, P](detail::Node<T>& self) {
        if (pf->requires_grad) {
          auto& g = pf->ensure_grad();
          for (std::size_t c = 0; c < C; ++c) {
            T* gi = g.data() + c * P;
            const T* go = self.grad.data() + c * P;
            for (std::size_t p = 0; p < P; ++p) {
              const auto& s = (*samples)[p];
              const T gv = go[p];
              gi[s.y0 * W + s.x0] += gv * (T(1) - s.ay) * (T(1) - s.ax);
              gi[s.y0 * W + s.x1] += gv * (T(1) - s.ay) * s.ax;
              gi[s.y1 * W + s.x0] += gv * s.ay * (T(1) - s.ax);
              gi[s.y1 * W + s.x1] += gv * s.ay * s.ax;
            }
          }
        }
        if (pv->requires_grad) {
          auto& g = pv->ensure_grad();
          for (std::size_t c = 0; c < C; ++c) {
            const T* img = pf->data.data() + c * P;
            const T* go = self.grad.data() + c * P;
            for (std::size_t p = 0; p < P; ++p) {
              const auto& s = (*samples)[p];
              const T v00 = img[s.y0 * W + s.x0], v01 = img[s.y0 * W + s.x1];
              const T v10 = img[s.y1 * W + s.x0], v11 = img[s.y1 * W + s.x1];
              if (s.free_x) g[p] += go[p] * ((T(1) - s.ay) * (v01 - v00) + s.ay * (v11 - v10));
              if (s.free_y)
                g[P + p] += go[p] * ((T(1) - s.ax) * (v10 - v00) + s.ax * (v11 - v01));
            }
          }
        }
      });
}

// Distance from the nearest sample coordinate p + v to an integer. Bilinear
// sampling and the border clamp are both non-differentiable exactly there.
template <typename T>
double warp_kink_distance(const FlowField<T>& flow) {
  const std::size_t H = flow.dim(1), W = flow.dim(2), P = H * W;
  double d = 0.5;
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      const double sx = static_cast<double>(x) + static_cast<double>(flow[y * W + x]);
      const double sy = static_cast<double>(y) + static_cast<double>(flow[P + y * W + x]);
      d = std::min({d, std::abs(sx - std::round(sx)), std::abs(sy - std::round(sy))});
    }
  return d;
}

// w (x) a + (1 - w) (x) b with the single-channel w broadcast over a's channels.
template <typename T>
Frame<T> convex_blend(const Frame<T>& a, const Frame<T>& b, const WeightMap<T>& w, const char* what) {
  detail::require_same_shape(a, b, what);
  detail::require_rank(w, 3, what);
  if (w.dim(0) != 1 || w.dim(1) != a.dim(1) || w.dim(2) != a.dim(2))
    throw ShapeError(std::string(what) + ": weight map " + shape_str(w.shape()) +
                     " does not match " + shape_str(a.shape()));
  require_unit_range(w, what);
  const auto wc = repeat_channels(w, a.dim(0));
  return add(mul(wc, a), mul(one_minus(wc), b));
}

// omega (x) S(x_t; v_t) + (1 - omega) (x) S(x_prev; v_prev)
template <typename T>
Frame<T> edvf_compose(const Frame<T>& x_t, const Frame<T>& x_prev, const FlowField<T>& v_t,
                      const FlowField<T>& v_prev, const WeightMap<T>& omega) {
  detail::require_same_shape(x_t, x_prev, "edvf_compose");
  return convex_blend(warp(x_t, v_t), warp(x_prev, v_prev), omega, "edvf_compose");
}

}  // namespace afp
