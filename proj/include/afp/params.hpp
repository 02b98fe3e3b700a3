// Named parameter collections and the Adam optimizer.

#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "afp/tensor.hpp"

namespace afp {

// Ordered, named collection of leaf tensors.
template <typename T>
class ParamSet {
 public:
  using Entry = std::pair<std::string, Tensor<T>>;

  Tensor<T>& add(std::string name, Tensor<T> t) {
    if (find(name)) throw std::invalid_argument("duplicate parameter block '" + name + "'");
    t.set_requires_grad(true);
    entries_.emplace_back(std::move(name), std::move(t));
    return entries_.back().second;
  }

  const Tensor<T>& get(const std::string& name) const {
    if (const auto* t = find(name)) return *t;
    throw std::out_of_range("no parameter block '" + name + "'");
  }
  Tensor<T>& get(const std::string& name) {
    return const_cast<Tensor<T>&>(std::as_const(*this).get(name));
  }

  const Tensor<T>* find(const std::string& name) const {
    for (const auto& [n, t] : entries_)
      if (n == name) return &t;
    return nullptr;
  }

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }
  const Entry& operator[](std::size_t i) const { return entries_[i]; }
  Entry& operator[](std::size_t i) { return entries_[i]; }

  std::size_t num_values() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.second.numel();
    return n;
  }

  // Deep copy: fresh leaves, no shared storage.
  ParamSet clone() const {
    ParamSet out;
    for (const auto& [n, t] : entries_) out.add(n, t.clone(true));
    return out;
  }

  void zero_grad() {
    for (auto& e : entries_) e.second.zero_grad();
  }

  // Appends another set with every name prefixed.
  void append(const ParamSet& other, const std::string& prefix) {
    for (const auto& [n, t] : other) add(prefix + n, t);
  }

  // Blocks whose names start with prefix, prefix stripped. Shares storage.
  ParamSet subset(const std::string& prefix) const {
    ParamSet out;
    for (const auto& [n, t] : entries_)
      if (n.rfind(prefix, 0) == 0) out.entries_.emplace_back(n.substr(prefix.size()), t);
    return out;
  }

  bool same_layout(const ParamSet& other) const {
    if (size() != other.size()) return false;
    for (std::size_t i = 0; i < size(); ++i)
      if (entries_[i].first != other.entries_[i].first ||
          entries_[i].second.shape() != other.entries_[i].second.shape())
        return false;
    return true;
  }

  bool values_equal(const ParamSet& other) const {
    if (!same_layout(other)) return false;
    for (std::size_t i = 0; i < size(); ++i)
      if (entries_[i].second.vec() != other.entries_[i].second.vec()) return false;
    return true;
  }

 private:
  std::vector<Entry> entries_;
};

template <typename To, typename From>
ParamSet<To> cast_params(const ParamSet<From>& p) {
  ParamSet<To> out;
  for (const auto& [n, t] : p) out.add(n, cast<To>(t));
  return out;
}

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

template <typename T>
struct AdamState {
  AdamConfig config;
  std::uint64_t step_count = 0;
  std::vector<std::vector<T>> first_moment;
  std::vector<std::vector<T>> second_moment;

  AdamState() = default;
  AdamState(const ParamSet<T>& params, AdamConfig cfg) : config(cfg) {
    if (!(cfg.lr > 0) || !(cfg.beta1 > 0 && cfg.beta1 < 1) || !(cfg.beta2 > 0 && cfg.beta2 < 1) ||
        !(cfg.epsilon > 0))
      throw std::invalid_argument("Adam: lr/epsilon must be positive and betas in (0,1)");
    for (const auto& [n, t] : params) {
      first_moment.emplace_back(t.numel(), T(0));
      second_moment.emplace_back(t.numel(), T(0));
    }
  }
};

// One bias-corrected Adam step with explicit per-block gradients.
template <typename T>
void adam_step(ParamSet<T>& params, std::span<const std::vector<T>> grads, AdamState<T>& state) {
  if (grads.size() != params.size() || state.first_moment.size() != params.size())
    throw ShapeError("adam_step: " + std::to_string(params.size()) + " parameter blocks but " +
                     std::to_string(grads.size()) + " gradients / " +
                     std::to_string(state.first_moment.size()) + " moment blocks");
  for (std::size_t b = 0; b < params.size(); ++b) {
    const std::size_t n = params[b].second.numel();
    if (grads[b].size() != n || state.first_moment[b].size() != n || state.second_moment[b].size() != n)
      throw ShapeError("adam_step: block '" + params[b].first + "' size mismatch");
  }
  const auto& c = state.config;
  state.step_count += 1;
  const double t = static_cast<double>(state.step_count);
  const T b1 = static_cast<T>(c.beta1), b2 = static_cast<T>(c.beta2);
  const T corr1 = static_cast<T>(1.0 - std::pow(c.beta1, t));
  const T corr2 = static_cast<T>(1.0 - std::pow(c.beta2, t));
  const T lr = static_cast<T>(c.lr), eps = static_cast<T>(c.epsilon);
  for (std::size_t b = 0; b < params.size(); ++b) {
    auto p = params[b].second.mutable_data();
    auto& m = state.first_moment[b];
    auto& v = state.second_moment[b];
    const auto& g = grads[b];
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = b1 * m[i] + (T(1) - b1) * g[i];
      v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
      const T mhat = m[i] / corr1;
      const T vhat = v[i] / corr2;
      p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

// Gradients as accumulated on the parameter leaves (absent -> zero).
template <typename T>
std::vector<std::vector<T>> collect_grads(const ParamSet<T>& params) {
  std::vector<std::vector<T>> out;
  out.reserve(params.size());
  for (const auto& [n, t] : params) {
    if (t.has_grad())
      out.emplace_back(t.grad().begin(), t.grad().end());
    else
      out.emplace_back(t.numel(), T(0));
  }
  return out;
}

template <typename T>
void adam_step(ParamSet<T>& params, AdamState<T>& state) {
  const auto grads = collect_grads(params);
  adam_step(params, std::span<const std::vector<T>>(grads), state);
}

// Uniform fan-in initialization U(-gain*sqrt(6/fan_in), +gain*sqrt(6/fan_in)).
template <typename T>
Tensor<T> uniform_fan_in(Shape shape, std::size_t fan_in, std::mt19937_64& rng, double gain = 1.0) {
  const double bound = gain * std::sqrt(6.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<T> data(shape_numel(shape));
  for (auto& v : data) v = static_cast<T>(dist(rng));
  return Tensor<T>::from(std::move(shape), std::move(data), true);
}

}  // namespace afp
