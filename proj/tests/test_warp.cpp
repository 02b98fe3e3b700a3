#include <gtest/gtest.h>

#include <random>

#include "afp/grad_check.hpp"
#include "afp/warp.hpp"

using namespace afp;

namespace {

template <typename T>
Tensor<T> random_tensor(Shape shape, std::mt19937_64& rng, double lo = 0, double hi = 1) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<T> v(shape_numel(shape));
  for (auto& x : v) x = static_cast<T>(u(rng));
  return Tensor<T>::from(std::move(shape), std::move(v));
}

Tensor<double> constant_flow(std::size_t H, std::size_t W, double dx, double dy) {
  std::vector<double> v(2 * H * W);
  std::fill(v.begin(), v.begin() + H * W, dx);
  std::fill(v.begin() + H * W, v.end(), dy);
  return Tensor<double>::from({2, H, W}, v);
}

// Flow whose sample coordinates stay at least `gap` from integers and inside
// the image, so warp is smooth in the flow there.
Tensor<double> smooth_flow(std::size_t H, std::size_t W, std::mt19937_64& rng, double gap) {
  std::uniform_real_distribution<double> u(-1.5, 1.5);
  std::vector<double> v(2 * H * W);
  for (std::size_t axis = 0; axis < 2; ++axis)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        const double base = axis == 0 ? static_cast<double>(x) : static_cast<double>(y);
        const double limit = axis == 0 ? static_cast<double>(W - 1) : static_cast<double>(H - 1);
        double f;
        for (;;) {
          f = u(rng);
          const double s = base + f;
          const double frac = s - std::floor(s);
          if (s > gap && s < limit - gap && frac > gap && frac < 1 - gap) break;
        }
        v[(axis * H + y) * W + x] = f;
      }
  return Tensor<double>::from({2, H, W}, v);
}

}  // namespace

TEST(Warp, ZeroFlowIsBitwiseIdentity) {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 5; ++i) {
    auto f = random_tensor<float>({3, 9, 13}, rng);
    auto out = warp(f, Tensor<float>::zeros({2, 9, 13}));
    EXPECT_EQ(out.vec(), f.vec());
  }
}

TEST(Warp, UnitRightShiftTakesRightNeighbour) {
  std::mt19937_64 rng(2);
  auto f = random_tensor<double>({2, 4, 5}, rng);
  auto out = warp(f, constant_flow(4, 5, 1.0, 0.0));
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t y = 0; y < 4; ++y)
      for (std::size_t x = 0; x < 5; ++x) EXPECT_EQ(out.at(c, y, x), f.at(c, y, std::min<std::size_t>(x + 1, 4)));
}

TEST(Warp, HalfPixelOnTwoPixelRow) {
  auto f = Tensor<double>::from({1, 1, 2}, {0.0, 1.0});
  auto out = warp(f, constant_flow(1, 2, 0.5, 0.0));
  EXPECT_DOUBLE_EQ(out[0], 0.5);
  EXPECT_DOUBLE_EQ(out[1], 1.0);
}

TEST(Warp, RejectsShapeMismatchAndNonFiniteFlow) {
  EXPECT_THROW(warp(Tensor<double>::zeros({3, 4, 4}), Tensor<double>::zeros({2, 4, 5})), ShapeError);
  EXPECT_THROW(warp(Tensor<double>::zeros({3, 4, 4}), Tensor<double>::zeros({1, 4, 4})), ShapeError);
  auto bad = constant_flow(4, 4, std::nan(""), 0);
  EXPECT_THROW(warp(Tensor<double>::zeros({3, 4, 4}), bad), std::domain_error);
}

TEST(Warp, KinkDistance) {
  EXPECT_DOUBLE_EQ(warp_kink_distance(constant_flow(4, 5, 0.0, 0.0)), 0.0);
  EXPECT_NEAR(warp_kink_distance(constant_flow(4, 5, 0.25, -0.4)), 0.25, 1e-15);
  EXPECT_NEAR(warp_kink_distance(constant_flow(4, 5, 2.5, 0.999)), 1e-3, 1e-12);
  std::mt19937_64 rng(9);
  EXPECT_GE(warp_kink_distance(smooth_flow(6, 7, rng, 1e-3)), 1e-3);
}

class WarpGradients : public ::testing::TestWithParam<std::uint64_t> {};

TEST_P(WarpGradients, FrameAndFlowMatchFiniteDifferences) {
  std::mt19937_64 rng(GetParam());
  ParamSet<double> p;
  p.add("frame", random_tensor<double>({3, 6, 7}, rng));
  p.add("flow", smooth_flow(6, 7, rng, 1e-3));
  auto fn = [](auto& s) { return sum(square(warp(s.get("frame"), s.get("flow")))); };
  GradCheckOptions o;
  o.eps = 1e-7;
  auto rep = grad_check(fn, p, o);
  EXPECT_TRUE(rep.ok()) << rep.worst();
  auto p32 = cast_params<float>(p);
  o.eps = 1e-4;
  o.tolerance = 1e-3;
  auto rep32 = grad_check(fn, p32, o);
  EXPECT_TRUE(rep32.ok()) << rep32.worst();
}

INSTANTIATE_TEST_SUITE_P(Seeds, WarpGradients, ::testing::Range<std::uint64_t>(0, 20));

TEST(EdvfCompose, DegenerateWeightsSelectOneBranchExactly) {
  std::mt19937_64 rng(3);
  auto a = random_tensor<float>({3, 8, 8}, rng), b = random_tensor<float>({3, 8, 8}, rng);
  auto va = random_tensor<float>({2, 8, 8}, rng, -2, 2), vb = random_tensor<float>({2, 8, 8}, rng, -2, 2);
  auto ones = Tensor<float>::full({1, 8, 8}, 1.0f), zeros = Tensor<float>::zeros({1, 8, 8});
  EXPECT_EQ(edvf_compose(a, b, va, vb, ones).vec(), warp(a, va).vec());
  EXPECT_EQ(edvf_compose(a, b, va, vb, zeros).vec(), warp(b, vb).vec());
}

TEST(EdvfCompose, HalfWeightZeroFlowsAverages) {
  std::mt19937_64 rng(4);
  auto a = random_tensor<double>({3, 5, 5}, rng), b = random_tensor<double>({3, 5, 5}, rng);
  auto zero = Tensor<double>::zeros({2, 5, 5});
  auto out = edvf_compose(a, b, zero, zero, Tensor<double>::full({1, 5, 5}, 0.5));
  for (std::size_t i = 0; i < out.numel(); ++i) EXPECT_NEAR(out[i], (a[i] + b[i]) / 2, 1e-15);
}

TEST(EdvfCompose, ConvexPerPixel) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    auto a = random_tensor<double>({3, 6, 6}, rng), b = random_tensor<double>({3, 6, 6}, rng);
    auto va = random_tensor<double>({2, 6, 6}, rng, -3, 3), vb = random_tensor<double>({2, 6, 6}, rng, -3, 3);
    auto w = random_tensor<double>({1, 6, 6}, rng);
    auto out = edvf_compose(a, b, va, vb, w);
    auto w1 = warp(a, va), w2 = warp(b, vb);
    for (std::size_t i = 0; i < out.numel(); ++i) {
      EXPECT_GE(out[i], std::min(w1[i], w2[i]) - 1e-15);
      EXPECT_LE(out[i], std::max(w1[i], w2[i]) + 1e-15);
    }
  }
}

TEST(EdvfCompose, RejectsOmegaOutsideUnitRange) {
  auto a = Tensor<double>::zeros({3, 4, 4});
  auto zero = Tensor<double>::zeros({2, 4, 4});
  EXPECT_THROW(edvf_compose(a, a, zero, zero, Tensor<double>::full({1, 4, 4}, 1.01)), std::domain_error);
  EXPECT_THROW(edvf_compose(a, a, zero, zero, Tensor<double>::full({1, 4, 4}, -0.01)), std::domain_error);
}

class ComposeGradients : public ::testing::TestWithParam<std::uint64_t> {};

TEST_P(ComposeGradients, AllFiveInputs) {
  std::mt19937_64 rng(100 + GetParam());
  ParamSet<double> p;
  p.add("x_t", random_tensor<double>({3, 6, 6}, rng));
  p.add("x_prev", random_tensor<double>({3, 6, 6}, rng));
  p.add("v_t", smooth_flow(6, 6, rng, 1e-3));
  p.add("v_prev", smooth_flow(6, 6, rng, 1e-3));
  p.add("omega", random_tensor<double>({1, 6, 6}, rng, 0.05, 0.95));
  auto fn = [](auto& s) {
    return sum(square(edvf_compose(s.get("x_t"), s.get("x_prev"), s.get("v_t"), s.get("v_prev"), s.get("omega"))));
  };
  GradCheckOptions o;
  o.eps = 1e-7;
  auto rep = grad_check(fn, p, o);
  EXPECT_TRUE(rep.ok()) << rep.worst();
  for (const auto& b : rep.blocks) EXPECT_GT(b.scale, 0) << b.name;
}

INSTANTIATE_TEST_SUITE_P(Seeds, ComposeGradients, ::testing::Range<std::uint64_t>(0, 20));
