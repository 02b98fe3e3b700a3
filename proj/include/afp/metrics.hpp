// Image quality measures: PSNR, SSIM, gradient-domain MSE, feature-space
// distance and their weighted combination mu.

#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "afp/conv.hpp"
#include "afp/params.hpp"
#include "afp/warp.hpp"

namespace afp {

inline constexpr double kPsnrCapDb = 100.0;
inline constexpr std::size_t kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;

template <typename T>
std::vector<T> gaussian_taps(std::size_t size = kSsimWindow, double sigma = kSsimSigma) {
  std::vector<double> w(size);
  const double mid = (static_cast<double>(size) - 1.0) / 2.0;
  double total = 0;
  for (std::size_t i = 0; i < size; ++i) {
    const double d = static_cast<double>(i) - mid;
    w[i] = std::exp(-d * d / (2 * sigma * sigma));
    total += w[i];
  }
  std::vector<T> out(size);
  for (std::size_t i = 0; i < size; ++i) out[i] = static_cast<T>(w[i] / total);
  return out;
}

template <typename T>
Tensor<T> mse(const Frame<T>& a, const Frame<T>& b) {
  return mean(square(sub(a, b)));
}

// Mean of the local SSIM map (11x11 Gaussian window, sigma 1.5, valid
// positions only), per channel and averaged over channels. Differentiable.
template <typename T>
Tensor<T> ssim_tensor(const Frame<T>& a, const Frame<T>& b) {
  detail::require_same_shape(a, b, "ssim");
  detail::require_rank(a, 3, "ssim");
  if (a.dim(1) < kSsimWindow || a.dim(2) < kSsimWindow)
    throw ShapeError("ssim: image " + shape_str(a.shape()) + " smaller than the 11x11 window");
  const auto taps = gaussian_taps<T>();
  auto blur = [&](const Tensor<T>& x) { return separable_filter_valid(x, taps); };
  const T c1 = static_cast<T>(kSsimC1), c2 = static_cast<T>(kSsimC2);
  const auto mu_a = blur(a), mu_b = blur(b);
  const auto mu_aa = mul(mu_a, mu_a), mu_bb = mul(mu_b, mu_b), mu_ab = mul(mu_a, mu_b);
  const auto var_a = sub(blur(mul(a, a)), mu_aa);
  const auto var_b = sub(blur(mul(b, b)), mu_bb);
  const auto cov = sub(blur(mul(a, b)), mu_ab);
  const auto num = mul(add_scalar(mul_scalar(mu_ab, T(2)), c1), add_scalar(mul_scalar(cov, T(2)), c2));
  const auto den = mul(add_scalar(add(mu_aa, mu_bb), c1), add_scalar(add(var_a, var_b), c2));
  return mean(div(num, den));
}

template <typename T>
double ssim(const Frame<T>& a, const Frame<T>& b) {
  NoGradGuard ng;
  return ssim_tensor(cast<double>(a), cast<double>(b)).item();
}

// 10 log10(1 / MSE) for images in [0,1]; capped at 100 dB (zero MSE).
template <typename T>
double psnr(const Frame<T>& a, const Frame<T>& b) {
  detail::require_same_shape(a, b, "psnr");
  double s = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    s += d * d;
  }
  const double m = s / static_cast<double>(a.numel());
  if (m <= 0) return kPsnrCapDb;
  return std::min(kPsnrCapDb, 10.0 * std::log10(1.0 / m));
}

// MSE between forward-difference gradient fields, averaged over all
// horizontal and vertical difference entries.
template <typename T>
Tensor<T> gradient_mse(const Frame<T>& a, const Frame<T>& b) {
  detail::require_same_shape(a, b, "gradient_mse");
  const auto dx = sub(spatial_diff(a, 2), spatial_diff(b, 2));
  const auto dy = sub(spatial_diff(a, 1), spatial_diff(b, 1));
  const auto nx = static_cast<T>(dx.numel()), ny = static_cast<T>(dy.numel());
  if (nx + ny == T(0)) return Tensor<T>::scalar(T(0));
  return mul_scalar(add(sum(square(dx)), sum(square(dy))), T(1) / (nx + ny));
}

// Mean absolute forward difference of a field (flow smoothness).
template <typename T>
Tensor<T> gradient_l1(const Tensor<T>& field) {
  const auto dx = spatial_diff(field, 2), dy = spatial_diff(field, 1);
  const auto n = static_cast<T>(dx.numel() + dy.numel());
  if (n == T(0)) return Tensor<T>::scalar(T(0));
  return mul_scalar(add(sum(abs(dx)), sum(abs(dy))), T(1) / n);
}

// Fixed (non-trainable) convolutional feature stack.
template <typename T>
struct FeatureExtractor {
  struct Stage {
    Tensor<T> kernel;
    Tensor<T> bias;
    std::size_t stride = 1;
    std::size_t padding = 0;
    bool relu = true;
  };
  std::vector<Stage> stages;

  std::vector<Tensor<T>> features(const Frame<T>& x) const {
    std::vector<Tensor<T>> out;
    Tensor<T> h = x;
    for (const auto& s : stages) {
      h = conv2d(h, s.kernel, s.bias, s.stride, s.padding);
      if (s.relu) h = relu(h);
      out.push_back(h);
    }
    return out;
  }

  // Five 3x3 stages, stride 2 after the first, seeded random weights.
  static FeatureExtractor random_stack(std::uint64_t seed, std::size_t width = 8) {
    std::mt19937_64 rng(seed);
    FeatureExtractor fx;
    std::size_t in = 3;
    for (int i = 0; i < 5; ++i) {
      Stage s;
      s.kernel = uniform_fan_in<T>({width, in, 3, 3}, in * 9, rng);
      s.kernel.set_requires_grad(false);
      s.bias = Tensor<T>::zeros({width});
      s.stride = i == 0 ? 1 : 2;
      s.padding = 1;
      fx.stages.push_back(std::move(s));
      in = width;
    }
    return fx;
  }

  template <typename U>
  FeatureExtractor<U> cast_to() const {
    FeatureExtractor<U> out;
    for (const auto& s : stages)
      out.stages.push_back({cast<U>(s.kernel), cast<U>(s.bias), s.stride, s.padding, s.relu});
    return out;
  }
};

// Sum over stages of the mean absolute feature difference.
template <typename T>
Tensor<T> perceptual_distance(const Frame<T>& a, const Frame<T>& b, const FeatureExtractor<T>& fx) {
  detail::require_same_shape(a, b, "perceptual_distance");
  if (fx.stages.empty()) throw std::invalid_argument("perceptual_distance: extractor has no stages");
  const auto fa = fx.features(a);
  const auto fb = fx.features(b);
  Tensor<T> total;
  for (std::size_t i = 0; i < fa.size(); ++i) {
    auto d = mean(abs(sub(fa[i], fb[i])));
    total = total.defined() ? add(total, d) : d;
  }
  return total;
}

struct MuWeights {
  double rho_msei = 0;
  double rho_msed = 0;
  double rho_ssim = 0;
  double rho_per = 0;

  static MuWeights offline() { return {0.05, 0.001, 10, 10}; }
  static MuWeights online() { return {0.0001, 0, 10, 0}; }

  void validate() const {
    for (double v : {rho_msei, rho_msed, rho_ssim, rho_per})
      if (!(v >= 0) || !std::isfinite(v)) throw std::invalid_argument("mu weights must be finite and >= 0");
    if (rho_msei + rho_msed + rho_ssim + rho_per <= 0)
      throw std::invalid_argument("mu weights: at least one weight must be positive");
  }
};

// rho_msei MSE + rho_msed gradMSE + rho_ssim (1 - SSIM) + rho_per Phi-L1.
// Zero-weight terms are not evaluated.
template <typename T>
Tensor<T> mu(const Frame<T>& x_hat, const Frame<T>& x, const MuWeights& w,
             const FeatureExtractor<T>* extractor = nullptr) {
  detail::require_same_shape(x_hat, x, "mu");
  w.validate();
  if (w.rho_per > 0 && (extractor == nullptr || extractor->stages.empty()))
    throw std::invalid_argument("mu: rho_per > 0 requires a feature extractor");
  Tensor<T> total;
  auto accumulate = [&](double rho, const Tensor<T>& term) {
    auto t = mul_scalar(term, static_cast<T>(rho));
    total = total.defined() ? add(total, t) : t;
  };
  if (w.rho_msei > 0) accumulate(w.rho_msei, mse(x_hat, x));
  if (w.rho_msed > 0) accumulate(w.rho_msed, gradient_mse(x_hat, x));
  if (w.rho_ssim > 0) accumulate(w.rho_ssim, one_minus(ssim_tensor(x_hat, x)));
  if (w.rho_per > 0) accumulate(w.rho_per, perceptual_distance(x_hat, x, *extractor));
  return total;
}

// Central crop of floor(fraction*H) x floor(fraction*W) at floor offsets.
template <typename T>
Frame<T> center_region(const Frame<T>& frame, double fraction) {
  if (!(fraction > 0 && fraction <= 1))
    throw std::invalid_argument("center_region: fraction must be in (0,1], got " + std::to_string(fraction));
  const std::size_t H = frame.dim(1), W = frame.dim(2);
  const auto h = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(H) + 1e-9));
  const auto w = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(W) + 1e-9));
  if (h == 0 || w == 0) throw std::invalid_argument("center_region: crop is empty");
  return crop(frame, (H - h) / 2, (W - w) / 2, h, w);
}

template <typename T>
Frame<T> clamp01(const Frame<T>& f) {
  std::vector<T> v(f.data().begin(), f.data().end());
  for (auto& x : v) x = std::clamp(x, T(0), T(1));
  return Tensor<T>::from(f.shape(), std::move(v));
}

}  // namespace afp
