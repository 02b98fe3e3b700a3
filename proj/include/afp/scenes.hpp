// Procedural video: smooth value-noise texture plus anti-aliased shapes,
// moved by one of a few motion models.

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "afp/warp.hpp"

namespace afp {

enum class SceneKind { translating_shapes, rotating_texture, camera_pan, static_scene };

inline std::string to_string(SceneKind k) {
  switch (k) {
    case SceneKind::translating_shapes: return "translating_shapes";
    case SceneKind::rotating_texture: return "rotating_texture";
    case SceneKind::camera_pan: return "camera_pan";
    case SceneKind::static_scene: return "static";
  }
  return "?";
}

inline SceneKind scene_kind_from_string(const std::string& s) {
  if (s == "translating_shapes") return SceneKind::translating_shapes;
  if (s == "rotating_texture") return SceneKind::rotating_texture;
  if (s == "camera_pan") return SceneKind::camera_pan;
  if (s == "static") return SceneKind::static_scene;
  throw std::invalid_argument("unknown scene kind '" + s + "'");
}

// Per-axis velocity bounds in pixels/frame. For rotating_texture the x range
// is the speed at half the frame size (the angular rate follows from it).
struct VelocityRange {
  double x_min = 0, x_max = 0;
  double y_min = 0, y_max = 0;

  double max_abs() const {
    return std::max({std::abs(x_min), std::abs(x_max), std::abs(y_min), std::abs(y_max)});
  }
};

struct SceneSpec {
  SceneKind kind = SceneKind::translating_shapes;
  std::size_t num_objects = 3;
  VelocityRange velocity;
  std::uint64_t texture_seed = 0;
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t length = 22;
  std::uint64_t seed = 0;

  void validate() const {
    if (height < 1 || width < 1) throw std::invalid_argument("scene size must be positive");
    if (velocity.x_min > velocity.x_max || velocity.y_min > velocity.y_max)
      throw std::invalid_argument("velocity range min exceeds max");
  }
};

namespace detail {

// Tileable three-channel value noise, three octaves.
class NoiseTexture {
 public:
  static constexpr std::size_t kLattice = 64;
  static constexpr double kCell = 10.0;

  explicit NoiseTexture(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (auto& ch : lattice_)
      for (auto& v : ch) v = u(rng);
    for (auto& o : offset_) o = u(rng) * kCell * kLattice;
  }

  std::array<double, 3> sample(double x, double y) const {
    std::array<double, 3> out{0, 0, 0};
    double amp = 0.55, freq = 1.0 / kCell, norm = 0;
    for (int oct = 0; oct < 3; ++oct) {
      for (std::size_t c = 0; c < 3; ++c)
        out[c] += amp * value(c, (x + offset_[c]) * freq + 17.0 * oct, (y + offset_[c]) * freq + 31.0 * oct);
      norm += amp;
      amp *= 0.5;
      freq *= 2.0;
    }
    for (auto& v : out) v = 0.1 + 0.8 * (v / norm);
    return out;
  }

 private:
  double at(std::size_t c, long i, long j) const {
    const long L = static_cast<long>(kLattice);
    const auto ii = static_cast<std::size_t>(((i % L) + L) % L);
    const auto jj = static_cast<std::size_t>(((j % L) + L) % L);
    return lattice_[c][jj * kLattice + ii];
  }

  double value(std::size_t c, double x, double y) const {
    const double fx = std::floor(x), fy = std::floor(y);
    const long i = static_cast<long>(fx), j = static_cast<long>(fy);
    const double tx = x - fx, ty = y - fy;
    const double sx = tx * tx * (3 - 2 * tx), sy = ty * ty * (3 - 2 * ty);
    const double a = at(c, i, j), b = at(c, i + 1, j), d = at(c, i, j + 1), e = at(c, i + 1, j + 1);
    return (a + sx * (b - a)) * (1 - sy) + (d + sx * (e - d)) * sy;
  }

  std::array<std::vector<double>, 3> lattice_{std::vector<double>(kLattice * kLattice),
                                              std::vector<double>(kLattice * kLattice),
                                              std::vector<double>(kLattice * kLattice)};
  std::array<double, 3> offset_{};
};

struct SceneObject {
  bool disc;
  double radius;
  double x, y;    // position at frame 0
  double vx, vy;  // own motion
  std::array<double, 3> color;
};

inline double wrap_delta(double d, double period) {
  return d - period * std::round(d / period);
}

}  // namespace detail

// Deterministic in spec (seed and texture_seed). Values in [0,1].
inline std::vector<Frame<float>> gen_scene(const SceneSpec& spec) {
  spec.validate();
  const std::size_t H = spec.height, W = spec.width;
  detail::NoiseTexture tex(spec.texture_seed);
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * u(rng); };

  const double vx = uniform(spec.velocity.x_min, spec.velocity.x_max);
  const double vy = uniform(spec.velocity.y_min, spec.velocity.y_max);
  const double min_dim = static_cast<double>(std::min(H, W));
  const double r_lo = std::max(2.0, 0.08 * min_dim), r_hi = std::max(3.0, 0.16 * min_dim);

  std::vector<detail::SceneObject> objects;
  for (std::size_t i = 0; i < spec.num_objects; ++i) {
    detail::SceneObject o;
    o.disc = u(rng) < 0.5;
    o.radius = uniform(r_lo, r_hi);
    o.x = uniform(0, static_cast<double>(W));
    o.y = uniform(0, static_cast<double>(H));
    o.color = {u(rng), u(rng), u(rng)};
    if (spec.kind == SceneKind::translating_shapes) {
      o.vx = uniform(spec.velocity.x_min, spec.velocity.x_max);
      o.vy = uniform(spec.velocity.y_min, spec.velocity.y_max);
    } else {
      o.vx = o.vy = 0;
    }
    objects.push_back(o);
  }
  // Objects live on a torus somewhat larger than the frame.
  const double period_x = static_cast<double>(W) + 4 * r_hi;
  const double period_y = static_cast<double>(H) + 4 * r_hi;
  const double cx = (static_cast<double>(W) - 1) / 2, cy = (static_cast<double>(H) - 1) / 2;
  const double omega = vx / (0.5 * min_dim);

  std::vector<Frame<float>> frames;
  frames.reserve(spec.length);
  for (std::size_t n = 0; n < spec.length; ++n) {
    const double t = static_cast<double>(n);
    std::vector<float> img(3 * H * W);
    const double ca = std::cos(-omega * t), sa = std::sin(-omega * t);
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        double wx = static_cast<double>(x), wy = static_cast<double>(y);
        switch (spec.kind) {
          case SceneKind::camera_pan:
            wx -= vx * t;
            wy -= vy * t;
            break;
          case SceneKind::rotating_texture: {
            const double dx = wx - cx, dy = wy - cy;
            wx = cx + ca * dx - sa * dy;
            wy = cy + sa * dx + ca * dy;
            break;
          }
          default:
            break;
        }
        auto px = tex.sample(wx, wy);
        for (const auto& o : objects) {
          const double ox = o.x + o.vx * t, oy = o.y + o.vy * t;
          const double dx = detail::wrap_delta(wx - ox, period_x), dy = detail::wrap_delta(wy - oy, period_y);
          const double d = o.disc ? std::hypot(dx, dy) : std::max(std::abs(dx), std::abs(dy));
          const double cover = std::clamp(o.radius - d + 0.5, 0.0, 1.0);
          if (cover > 0)
            for (std::size_t c = 0; c < 3; ++c) px[c] = (1 - cover) * px[c] + cover * o.color[c];
        }
        for (std::size_t c = 0; c < 3; ++c)
          img[(c * H + y) * W + x] = static_cast<float>(std::clamp(px[c], 0.0, 1.0));
      }
    frames.push_back(Frame<float>::from({3, H, W}, std::move(img)));
  }
  return frames;
}

// Ordered list of scene segments, each generated `repeat` times with
// consecutive seeds.
struct ScriptEntry {
  SceneSpec scene;
  std::size_t repeat = 1;
};
using StreamScript = std::vector<ScriptEntry>;

// Expands a script into concrete scene specs (repeat r uses seed + r and
// texture_seed + r).
inline std::vector<SceneSpec> expand_script(const StreamScript& script) {
  if (script.empty()) throw std::invalid_argument("stream script is empty");
  std::vector<SceneSpec> out;
  for (const auto& e : script)
    for (std::size_t r = 0; r < e.repeat; ++r) {
      SceneSpec s = e.scene;
      s.seed += r;
      s.texture_seed += r;
      out.push_back(s);
    }
  return out;
}

}  // namespace afp
