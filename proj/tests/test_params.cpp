#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "afp/grad_check.hpp"
#include "afp/conv.hpp"
#include "afp/param_io.hpp"

using namespace afp;

namespace {

ParamSet<float> sample_params() {
  std::mt19937_64 rng(42);
  ParamSet<float> p;
  p.add("conv.w", uniform_fan_in<float>({4, 3, 3, 3}, 27, rng));
  p.add("conv.b", Tensor<float>::from({4}, {0.5f, -1.0f, 0.0f, 3.25f}, true));
  p.add("head", uniform_fan_in<float>({1, 4, 1, 1}, 4, rng));
  return p;
}

std::filesystem::path temp_path(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "afp_test_params";
  std::filesystem::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST(Adam, ZeroGradientsFreshStateIsFixedPoint) {
  auto p = sample_params();
  const auto before = p.clone();
  AdamState<float> st(p, {});
  std::vector<std::vector<float>> zeros;
  for (const auto& [n, t] : p) zeros.emplace_back(t.numel(), 0.0f);
  for (int i = 0; i < 3; ++i) adam_step(p, std::span<const std::vector<float>>(zeros), st);
  EXPECT_TRUE(p.values_equal(before));
  EXPECT_EQ(st.step_count, 3u);
}

TEST(Adam, FirstStepClosedForm) {
  ParamSet<double> p;
  p.add("x", Tensor<double>::from({4}, {1.0, -2.0, 0.5, 0.0}, true));
  const std::vector<std::vector<double>> g = {{0.3, -4.0, 1e-3, 2.0}};
  AdamConfig cfg;
  AdamState<double> st(p, cfg);
  const auto before = p.get("x").vec();
  adam_step(p, std::span<const std::vector<double>>(g), st);
  for (std::size_t i = 0; i < 4; ++i) {
    // m_hat = g, v_hat = g^2 at t = 1
    const double expect = cfg.lr * g[0][i] / (std::abs(g[0][i]) + cfg.epsilon);
    EXPECT_NEAR(before[i] - p.get("x")[i], expect, 1e-15);
  }
  EXPECT_EQ(st.step_count, 1u);
}

TEST(Adam, SecondIdenticalStepClosedForm) {
  ParamSet<double> p;
  p.add("x", Tensor<double>::from({2}, {0.0, 0.0}, true));
  const std::vector<std::vector<double>> g = {{0.02, -5.0}};
  AdamConfig cfg;
  AdamState<double> st(p, cfg);
  adam_step(p, std::span<const std::vector<double>>(g), st);
  const auto after1 = p.get("x").vec();
  adam_step(p, std::span<const std::vector<double>>(g), st);
  const double b1 = cfg.beta1, b2 = cfg.beta2;
  for (std::size_t i = 0; i < 2; ++i) {
    const double gi = g[0][i];
    const double m = (1 - b1) * gi * b1 + (1 - b1) * gi;
    const double v = (1 - b2) * gi * gi * b2 + (1 - b2) * gi * gi;
    const double mhat = m / (1 - b1 * b1), vhat = v / (1 - b2 * b2);
    const double step = cfg.lr * mhat / (std::sqrt(vhat) + cfg.epsilon);
    EXPECT_NEAR(after1[i] - p.get("x")[i], step, 1e-15);
    EXPECT_LT(std::abs(step), cfg.lr);
  }
}

TEST(Adam, RejectsShapeMismatch) {
  auto p = sample_params();
  AdamState<float> st(p, {});
  std::vector<std::vector<float>> bad = {{1.0f}};
  EXPECT_THROW(adam_step(p, std::span<const std::vector<float>>(bad), st), ShapeError);
  std::vector<std::vector<float>> wrong_size;
  for (const auto& [n, t] : p) wrong_size.emplace_back(t.numel() + 1, 0.0f);
  EXPECT_THROW(adam_step(p, std::span<const std::vector<float>>(wrong_size), st), ShapeError);
  EXPECT_EQ(st.step_count, 0u);
}

TEST(Adam, MomentsMatchParameterShapes) {
  auto p = sample_params();
  AdamState<float> st(p, {});
  ASSERT_EQ(st.first_moment.size(), p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    EXPECT_EQ(st.first_moment[i].size(), p[i].second.numel());
    EXPECT_EQ(st.second_moment[i].size(), p[i].second.numel());
  }
}

TEST(Adam, UsesAccumulatedGradients) {
  ParamSet<double> p;
  p.add("x", Tensor<double>::from({3}, {1, 2, 3}, true));
  AdamState<double> st(p, {});
  backward(sum(square(p.get("x"))));
  adam_step(p, st);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(p.get("x")[i], (i + 1) - 1e-4, 1e-10);
}

TEST(ParamSet, CloneIsDeep) {
  auto p = sample_params();
  auto c = p.clone();
  EXPECT_TRUE(c.values_equal(p));
  c.get("conv.b").mutable_data()[0] = 99.0f;
  EXPECT_FLOAT_EQ(p.get("conv.b")[0], 0.5f);
}

TEST(GradCheck, LinearLayer64) {
  std::mt19937_64 rng(8);
  ParamSet<double> p;
  p.add("w", uniform_fan_in<double>({5, 4, 1, 1}, 4, rng));
  p.add("b", uniform_fan_in<double>({5}, 4, rng));
  p.add("x", uniform_fan_in<double>({4, 1, 1}, 1, rng));
  auto fn = [](auto& s) { return sum(square(conv2d(s.get("x"), s.get("w"), s.get("b")))); };
  auto rep = grad_check(fn, p);
  EXPECT_TRUE(rep.ok());
  EXPECT_LT(rep.worst(), 1e-5);
  EXPECT_EQ(rep.blocks.size(), 3u);
}

TEST(Dcp1, RoundTripIsExactForFloats) {
  auto p = sample_params();
  const auto path = temp_path("round.dcp");
  save_params(p, path);
  auto q = load_params<float>(path);
  EXPECT_TRUE(q.values_equal(p));
  EXPECT_EQ(params_checksum(q), params_checksum(p));
}

TEST(Dcp1, ByteLayout) {
  ParamSet<float> p;
  p.add("ab", Tensor<float>::from({2}, {1.0f, -2.0f}));
  const auto bytes = encode_params(p);
  ASSERT_EQ(bytes.size(), 4u + 4 + 2 + 4 + 4 + 8);
  EXPECT_EQ(bytes.substr(0, 4), "DCP1");
  EXPECT_EQ(static_cast<unsigned char>(bytes[4]), 2u);
  EXPECT_EQ(bytes.substr(8, 2), "ab");
  EXPECT_EQ(static_cast<unsigned char>(bytes[10]), 1u);  // rank
  EXPECT_EQ(static_cast<unsigned char>(bytes[14]), 2u);  // dim
  float f;
  std::memcpy(&f, bytes.data() + 22, 4);
  EXPECT_EQ(f, -2.0f);
}

TEST(Dcp1, RejectsTruncationAndBadMagic) {
  const auto bytes = encode_params(sample_params());
  for (std::size_t cut : {bytes.size() - 1, bytes.size() - 4, std::size_t{6}, std::size_t{13}})
    EXPECT_THROW(decode_params<float>(bytes.substr(0, cut)), IoError) << cut;
  EXPECT_THROW(decode_params<float>("DCP2" + bytes.substr(4)), IoError);
  EXPECT_THROW(load_params<float>(temp_path("does_not_exist.dcp")), IoError);
}

TEST(Checksum, ChangesWithAnyValue) {
  auto p = sample_params();
  const auto a = params_checksum(p);
  EXPECT_EQ(a.size(), 64u);
  p.get("head").mutable_data()[0] += 1e-6f;
  EXPECT_NE(params_checksum(p), a);
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}
