// Central-difference gradient checking.
//
// The error reported for a block is max_i |analytic_i - numeric_i| divided by
// the block's gradient scale (the largest magnitude among its analytic and
// numeric entries), so blocks with uniformly tiny gradients are judged
// relative to themselves rather than to an absolute floor.
//
// Networks with ReLU, clamping or bilinear sampling are only piecewise
// smooth. With kink_retries > 0 an entry whose central difference disagrees
// with the analytic value is probed for non-smoothness within eps: its
// forward and backward one-sided slopes are compared, and the central
// difference is repeated at eps/10. If either pair disagrees, another entry
// of the block is drawn instead. On a smooth function both pairs agree, so a
// genuine gradient error is still reported.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "afp/params.hpp"

namespace afp {

struct GradCheckOptions {
  double eps = 1e-6;
  double tolerance = 1e-5;
  // 0 checks every entry; otherwise a seeded random sample per block.
  std::size_t max_samples_per_block = 0;
  std::uint64_t seed = 0;
  // For 32-bit checks: evaluate the finite differences on a 64-bit copy of
  // the inputs so the oracle is not dominated by float rounding.
  bool double_reference = true;
  // Replacement draws allowed per block for entries that sit near a kink.
  std::size_t kink_retries = 0;
};

struct BlockReport {
  std::string name;
  double max_rel_error = 0;
  double scale = 0;
  std::size_t checked = 0;
  std::size_t kinks_skipped = 0;
  bool ok = true;
};

struct GradCheckReport {
  std::vector<BlockReport> blocks;
  bool ok() const {
    return std::all_of(blocks.begin(), blocks.end(), [](const auto& b) { return b.ok; });
  }
  double worst() const {
    double w = 0;
    for (const auto& b : blocks) w = std::max(w, b.max_rel_error);
    return w;
  }
};

// fn must accept ParamSet<T>& (and ParamSet<double>& when double_reference
// is used with T = float) and return a scalar Tensor of the same scalar type.
template <typename T, typename F>
GradCheckReport grad_check(F&& fn, ParamSet<T>& inputs, const GradCheckOptions& opt = {}) {
  inputs.zero_grad();
  auto loss = fn(inputs);
  backward(loss);
  const auto analytic = collect_grads(inputs);

  constexpr bool can_promote = !std::is_same_v<T, double>;
  const bool promote = can_promote && opt.double_reference;

  // f(x + eps) and f(x - eps) for one entry.
  auto probe = [&](auto& set, std::size_t block, std::size_t idx, double eps) -> std::pair<double, double> {
    using S = typename std::decay_t<decltype(set)>::Entry::second_type::value_type;
    NoGradGuard ng;
    auto data = set[block].second.mutable_data();
    const S orig = data[idx];
    data[idx] = orig + static_cast<S>(eps);
    const double up = static_cast<double>(fn(set).item());
    data[idx] = orig - static_cast<S>(eps);
    const double down = static_cast<double>(fn(set).item());
    data[idx] = orig;
    return {up, down};
  };

  ParamSet<double> ref;
  if constexpr (can_promote)
    if (promote) ref = cast_params<double>(inputs);
  double center;
  {
    NoGradGuard ng;
    if constexpr (can_promote) {
      center = promote ? fn(ref).item() : static_cast<double>(fn(inputs).item());
    } else {
      center = fn(inputs).item();
    }
  }

  std::mt19937_64 rng(opt.seed);
  GradCheckReport report;
  for (std::size_t b = 0; b < inputs.size(); ++b) {
    const std::size_t n = inputs[b].second.numel();
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    std::size_t want = n;
    if (opt.max_samples_per_block && n > opt.max_samples_per_block) want = opt.max_samples_per_block;
    if (want < n || opt.kink_retries) std::shuffle(idx.begin(), idx.end(), rng);
    BlockReport br{inputs[b].first};
    double scale = 0;
    for (T g : analytic[b]) scale = std::max(scale, std::abs(static_cast<double>(g)));
    const double analytic_scale = scale;
    auto sides = [&](std::size_t i, double eps) {
      if constexpr (can_promote) {
        return promote ? probe(ref, b, i, eps) : probe(inputs, b, i, eps);
      } else {
        return probe(inputs, b, i, eps);
      }
    };
    std::vector<double> errs;
    for (std::size_t pos = 0; pos < n && errs.size() < want; ++pos) {
      const std::size_t i = idx[pos];
      const double a = static_cast<double>(analytic[b][i]);
      const auto [up, down] = sides(i, opt.eps);
      const double num = (up - down) / (2.0 * opt.eps);
      const double bound = opt.tolerance * std::max({analytic_scale, std::abs(num), 1e-300});
      if (br.kinks_skipped < opt.kink_retries && std::abs(a - num) >= bound) {
        const double right = (up - center) / opt.eps, left = (center - down) / opt.eps;
        bool kink = std::abs(right - left) >= bound;
        if (!kink) {
          const auto [up10, down10] = sides(i, opt.eps / 10);
          kink = std::abs((up10 - down10) / (opt.eps / 5) - num) >= bound;
        }
        if (kink) {
          ++br.kinks_skipped;
          continue;
        }
      }
      scale = std::max(scale, std::abs(num));
      errs.push_back(std::abs(a - num));
    }
    br.scale = scale;
    br.checked = errs.size();
    for (double e : errs) br.max_rel_error = std::max(br.max_rel_error, scale > 0 ? e / scale : e);
    br.ok = br.max_rel_error < opt.tolerance;
    report.blocks.push_back(br);
  }
  return report;
}

}  // namespace afp
