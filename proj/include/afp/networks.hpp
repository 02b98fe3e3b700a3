// Prediction network (extended voxel flow head + two residual refinement
// hourglasses) and the per-pixel weight-estimation network.
//
// Every sub-network is an hourglass: a full-resolution stem, `depth`
// stride-2 encoder convolutions, and a decoder that upsamples bilinearly,
// concatenates the matching encoder feature and convolves. Level channel
// counts are base/2 for the stem and base * 2^(i-1) for encoder level i.

#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "afp/conv.hpp"
#include "afp/params.hpp"
#include "afp/warp.hpp"

namespace afp {

struct Architecture {
  std::size_t edvf_depth = 3;
  std::size_t edvf_base = 32;
  std::size_t refine_depth = 2;
  std::size_t refine_base = 32;
  std::size_t weight_depth = 2;
  std::size_t weight_base = 16;
  double max_disp = 16.0;

  void validate() const {
    for (auto [name, base] : {std::pair{"edvf_base", edvf_base}, std::pair{"refine_base", refine_base},
                              std::pair{"weight_base", weight_base}})
      if (base < 2 || base % 2 != 0)
        throw std::invalid_argument(std::string("architecture.") + name + " must be an even number >= 2");
    for (auto [name, d] : {std::pair{"edvf_depth", edvf_depth}, std::pair{"refine_depth", refine_depth},
                           std::pair{"weight_depth", weight_depth}})
      if (d < 1 || d > 8) throw std::invalid_argument(std::string("architecture.") + name + " must be in [1,8]");
    if (!(max_disp > 0)) throw std::invalid_argument("architecture.max_disp must be positive");
  }

  // Spatial dims must be divisible by this.
  std::size_t required_multiple() const {
    return std::size_t{1} << std::max({edvf_depth, refine_depth, weight_depth});
  }

  bool operator==(const Architecture&) const = default;
};

struct HourglassSpec {
  std::size_t in_channels;
  std::size_t base;
  std::size_t depth;

  std::size_t channels(std::size_t level) const {
    return level == 0 ? base / 2 : base << (level - 1);
  }
};

namespace detail {

template <typename T>
void add_conv(ParamSet<T>& p, const std::string& name, std::size_t out, std::size_t in,
              std::mt19937_64& rng, double gain) {
  if (gain == 0.0)
    p.add(name + ".w", Tensor<T>::zeros({out, in, 3, 3}));
  else
    p.add(name + ".w", uniform_fan_in<T>({out, in, 3, 3}, in * 9, rng, gain));
  p.add(name + ".b", Tensor<T>::zeros({out}));
}

template <typename T>
Tensor<T> conv3(const ParamSet<T>& p, const std::string& name, const Tensor<T>& x, std::size_t stride = 1) {
  return conv2d(x, p.get(name + ".w"), p.get(name + ".b"), stride, 1);
}

}  // namespace detail

template <typename T>
void hourglass_params(ParamSet<T>& p, const HourglassSpec& s, std::mt19937_64& rng) {
  detail::add_conv(p, "stem", s.channels(0), s.in_channels, rng, 1.0);
  for (std::size_t i = 1; i <= s.depth; ++i)
    detail::add_conv(p, "enc" + std::to_string(i), s.channels(i), s.channels(i - 1), rng, 1.0);
  for (std::size_t i = s.depth; i >= 1; --i)
    detail::add_conv(p, "dec" + std::to_string(i), s.channels(i - 1), s.channels(i) + s.channels(i - 1),
                     rng, 1.0);
}

// Returns the full-resolution decoder feature [base/2, H, W].
template <typename T>
Tensor<T> hourglass_forward(const ParamSet<T>& p, const HourglassSpec& s, const Tensor<T>& x) {
  const std::size_t m = std::size_t{1} << s.depth;
  if (x.dim(1) % m != 0 || x.dim(2) % m != 0) {
    const auto pad = [m](std::size_t v) { return (m - v % m) % m; };
    throw ShapeError("hourglass of depth " + std::to_string(s.depth) + " needs spatial dims divisible by " +
                     std::to_string(m) + "; input " + shape_str(x.shape()) + " needs padding of " +
                     std::to_string(pad(x.dim(1))) + " rows and " + std::to_string(pad(x.dim(2))) + " columns");
  }
  std::vector<Tensor<T>> skips;
  Tensor<T> h = relu(detail::conv3(p, "stem", x));
  skips.push_back(h);
  for (std::size_t i = 1; i <= s.depth; ++i) {
    h = relu(detail::conv3(p, "enc" + std::to_string(i), h, 2));
    skips.push_back(h);
  }
  for (std::size_t i = s.depth; i >= 1; --i) {
    const auto& skip = skips[i - 1];
    auto up = resize_bilinear(h, skip.dim(1), skip.dim(2));
    h = relu(detail::conv3(p, "dec" + std::to_string(i), concat_channels<T>({up, skip})));
  }
  return h;
}

template <typename T>
struct PredictionParams {
  Architecture arch;
  ParamSet<T> edvf;
  ParamSet<T> refine1;
  ParamSet<T> refine2;

  HourglassSpec edvf_spec() const { return {6, arch.edvf_base, arch.edvf_depth}; }
  HourglassSpec refine1_spec() const { return {11, arch.refine_base, arch.refine_depth}; }
  HourglassSpec refine2_spec() const { return {6, arch.refine_base, arch.refine_depth}; }

  // One set sharing storage with the three blocks, names prefixed.
  ParamSet<T> all() const {
    ParamSet<T> out;
    out.append(edvf, "edvf.");
    out.append(refine1, "refine1.");
    out.append(refine2, "refine2.");
    return out;
  }

  PredictionParams clone() const { return {arch, edvf.clone(), refine1.clone(), refine2.clone()}; }

  static PredictionParams init(const Architecture& arch, std::uint64_t seed);

  // Rebuilds from a flat prefixed set, validating every block shape.
  static PredictionParams from_flat(const Architecture& arch, const ParamSet<T>& flat) {
    auto ref = init(arch, 0).all();
    if (!ref.same_layout(flat))
      throw ShapeError("prediction parameters do not match the declared architecture");
    PredictionParams out{arch, flat.subset("edvf."), flat.subset("refine1."), flat.subset("refine2.")};
    return out;
  }
};

template <typename T>
PredictionParams<T> PredictionParams<T>::init(const Architecture& arch, std::uint64_t seed) {
  arch.validate();
  std::mt19937_64 rng(seed);
  PredictionParams p{arch, {}, {}, {}};
  hourglass_params(p.edvf, p.edvf_spec(), rng);
  const std::size_t c0 = p.edvf_spec().channels(0);
  // Small flow heads keep the initial sampling displacements near zero.
  detail::add_conv(p.edvf, "head_vt", 2, c0, rng, 0.1);
  detail::add_conv(p.edvf, "head_vprev", 2, c0, rng, 0.1);
  detail::add_conv(p.edvf, "head_omega", 1, c0, rng, 1.0);
  hourglass_params(p.refine1, p.refine1_spec(), rng);
  detail::add_conv(p.refine1, "head", 3, p.refine1_spec().channels(0), rng, 0.0);
  hourglass_params(p.refine2, p.refine2_spec(), rng);
  detail::add_conv(p.refine2, "head", 3, p.refine2_spec().channels(0), rng, 0.0);
  return p;
}

template <typename T>
struct WeightNetParams {
  Architecture arch;
  ParamSet<T> layers;

  HourglassSpec spec() const { return {6, arch.weight_base, arch.weight_depth}; }
  WeightNetParams clone() const { return {arch, layers.clone()}; }

  // Random trunk, zero head: the initial gate is 0.5 everywhere.
  static WeightNetParams init(const Architecture& arch, std::uint64_t seed) {
    arch.validate();
    std::mt19937_64 rng(seed);
    WeightNetParams p{arch, {}};
    hourglass_params(p.layers, p.spec(), rng);
    detail::add_conv(p.layers, "head", 1, p.spec().channels(0), rng, 0.0);
    return p;
  }

  static WeightNetParams from_flat(const Architecture& arch, const ParamSet<T>& flat) {
    if (!init(arch, 0).layers.same_layout(flat))
      throw ShapeError("weight-network parameters do not match the declared architecture");
    return {arch, flat};
  }
};

template <typename T>
struct EdvfOutput {
  FlowField<T> v_t;
  FlowField<T> v_prev;
  WeightMap<T> omega;
};

template <typename T>
struct PredictionBundle {
  Frame<T> x_e;
  Frame<T> x_r1;
  Frame<T> x_r2;
  FlowField<T> v_t;
  FlowField<T> v_prev;
  WeightMap<T> omega;
};

namespace detail {

template <typename T>
void require_frame_pair(const Frame<T>& a, const Frame<T>& b, const char* op) {
  require_rank(a, 3, op);
  if (a.dim(0) != 3) throw ShapeError(std::string(op) + ": frames must have 3 channels, got " + shape_str(a.shape()));
  require_same_shape(a, b, op);
}

template <typename T>
Tensor<T> centered(const Tensor<T>& x) {
  return add_scalar(x, T(-0.5));
}

}  // namespace detail

// Two independent flows (toward t+k from t and from t-k) and the blend map.
template <typename T>
EdvfOutput<T> edvf_forward(const Frame<T>& x_t, const Frame<T>& x_prev, const PredictionParams<T>& params) {
  detail::require_frame_pair(x_t, x_prev, "edvf_forward");
  const auto& p = params.edvf;
  const auto feat =
      hourglass_forward(p, params.edvf_spec(), detail::centered(concat_channels<T>({x_t, x_prev})));
  const T md = static_cast<T>(params.arch.max_disp);
  EdvfOutput<T> out;
  out.v_t = mul_scalar(tanh(detail::conv3(p, "head_vt", feat)), md);
  out.v_prev = mul_scalar(tanh(detail::conv3(p, "head_vprev", feat)), md);
  out.omega = sigmoid(detail::conv3(p, "head_omega", feat));
  return out;
}

// x_e + g_R1(x_prev, x_t, v_prev, v_t, omega)
template <typename T>
Frame<T> refine1(const Frame<T>& x_e, const Frame<T>& x_t, const Frame<T>& x_prev, const FlowField<T>& v_t,
                 const FlowField<T>& v_prev, const WeightMap<T>& omega, const PredictionParams<T>& params) {
  detail::require_frame_pair(x_t, x_prev, "refine1");
  detail::require_same_shape(x_e, x_t, "refine1");
  const T inv = static_cast<T>(1.0 / params.arch.max_disp);
  const auto in = concat_channels<T>({detail::centered(x_prev), detail::centered(x_t), mul_scalar(v_prev, inv),
                                      mul_scalar(v_t, inv), detail::centered(omega)});
  const auto feat = hourglass_forward(params.refine1, params.refine1_spec(), in);
  return add(x_e, detail::conv3(params.refine1, "head", feat));
}

// x_r1 + g_R2(x_e, x_r1)
template <typename T>
Frame<T> refine2(const Frame<T>& x_e, const Frame<T>& x_r1, const PredictionParams<T>& params) {
  detail::require_frame_pair(x_e, x_r1, "refine2");
  const auto in = concat_channels<T>({detail::centered(x_e), detail::centered(x_r1)});
  const auto feat = hourglass_forward(params.refine2, params.refine2_spec(), in);
  return add(x_r1, detail::conv3(params.refine2, "head", feat));
}

template <typename T>
PredictionBundle<T> predict(const Frame<T>& x_t, const Frame<T>& x_prev, const PredictionParams<T>& params) {
  auto e = edvf_forward(x_t, x_prev, params);
  PredictionBundle<T> b;
  b.x_e = edvf_compose(x_t, x_prev, e.v_t, e.v_prev, e.omega);
  b.x_r1 = refine1(b.x_e, x_t, x_prev, e.v_t, e.v_prev, e.omega, params);
  b.x_r2 = refine2(b.x_e, b.x_r1, params);
  b.v_t = std::move(e.v_t);
  b.v_prev = std::move(e.v_prev);
  b.omega = std::move(e.omega);
  return b;
}

template <typename T>
WeightMap<T> weight_net_forward(const Frame<T>& x_t, const Frame<T>& x_prev, const WeightNetParams<T>& params) {
  detail::require_frame_pair(x_t, x_prev, "weight_net_forward");
  const auto feat =
      hourglass_forward(params.layers, params.spec(), detail::centered(concat_channels<T>({x_t, x_prev})));
  return sigmoid(detail::conv3(params.layers, "head", feat));
}

template <typename To, typename From>
PredictionParams<To> cast_params(const PredictionParams<From>& p) {
  return {p.arch, cast_params<To>(p.edvf), cast_params<To>(p.refine1), cast_params<To>(p.refine2)};
}

template <typename To, typename From>
WeightNetParams<To> cast_params(const WeightNetParams<From>& p) {
  return {p.arch, cast_params<To>(p.layers)};
}

}  // namespace afp
