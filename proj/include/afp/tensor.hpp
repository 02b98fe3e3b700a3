// Dense channel-first tensors with reverse-mode automatic differentiation.
//
// A Tensor is a cheap handle onto a shared node. Nodes created by operations
// remember their parents and a closure that pushes the node's gradient back
// into them; `backward` walks the graph in reverse topological order.
// Layout is row-major throughout, images are [C, H, W].

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace afp {

using Shape = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

namespace detail {

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until something is accumulated
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;
  const char* op = "leaf";

  std::vector<T>& ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad;
  }
};

}  // namespace detail

// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

inline bool grad_enabled() { return detail::grad_mode(); }

template <typename T>
class Tensor {
 public:
  using value_type = T;
  using NodeT = detail::Node<T>;

  Tensor() = default;

  static Tensor zeros(Shape shape) { return full(std::move(shape), T(0)); }

  static Tensor full(Shape shape, T value) {
    require_positive(shape);
    auto n = std::make_shared<NodeT>();
    n->data.assign(shape_numel(shape), value);
    n->shape = std::move(shape);
    return Tensor(std::move(n));
  }

  static Tensor from(Shape shape, std::vector<T> data, bool requires_grad = false) {
    require_positive(shape);
    if (shape_numel(shape) != data.size())
      throw ShapeError("tensor data length " + std::to_string(data.size()) +
                       " does not match shape " + shape_str(shape));
    auto n = std::make_shared<NodeT>();
    n->shape = std::move(shape);
    n->data = std::move(data);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  static Tensor scalar(T v, bool requires_grad = false) { return from({1}, {v}, requires_grad); }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->data.size(); }

  std::span<const T> data() const { return node_->data; }
  // Leaf-only mutation (optimizer steps, initialization, test perturbation).
  std::span<T> mutable_data() {
    if (!node_->parents.empty()) throw std::logic_error("mutable_data on non-leaf tensor");
    return node_->data;
  }
  const std::vector<T>& vec() const { return node_->data; }

  T item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
    return node_->data[0];
  }
  T operator[](std::size_t i) const { return node_->data[i]; }
  T at(std::size_t c, std::size_t y, std::size_t x) const {
    return node_->data[(c * dim(1) + y) * dim(2) + x];
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool v) { node_->requires_grad = v; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  void zero_grad() { node_->grad.clear(); }

  // Same values, no history.
  Tensor detach() const { return from(shape(), node_->data); }
  Tensor clone(bool requires_grad) const { return from(shape(), node_->data, requires_grad); }

  const std::shared_ptr<NodeT>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<NodeT> n) : node_(std::move(n)) {}

 private:
  static void require_positive(const Shape& shape) {
    if (shape.empty() || std::find(shape.begin(), shape.end(), std::size_t{0}) != shape.end())
      throw ShapeError("tensor shape must be a non-empty list of positive sizes, got " + shape_str(shape));
  }

  std::shared_ptr<NodeT> node_;
};

template <typename To, typename From>
Tensor<To> cast(const Tensor<From>& t) {
  std::vector<To> out(t.data().begin(), t.data().end());
  return Tensor<To>::from(t.shape(), std::move(out));
}

namespace detail {

// Builds the result node for an operation. History is recorded only when
// grad mode is on and some input requires a gradient.
template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> data, const char* op,
                      std::vector<std::shared_ptr<Node<T>>> parents,
                      std::function<void(Node<T>&)> backward_fn) {
  auto n = std::make_shared<Node<T>>();
  n->shape = std::move(shape);
  n->data = std::move(data);
  n->op = op;
  bool track = grad_mode() &&
               std::any_of(parents.begin(), parents.end(),
                           [](const auto& p) { return p->requires_grad; });
  if (track) {
    n->requires_grad = true;
    n->parents = std::move(parents);
    n->backward_fn = std::move(backward_fn);
  }
  return Tensor<T>(std::move(n));
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

template <typename T>
void require_rank(const Tensor<T>& a, std::size_t r, const char* op) {
  if (a.rank() != r)
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(r) + ", got " +
                     shape_str(a.shape()));
}

// Unary elementwise op: forward f(x), local derivative df(x, y).
template <typename T, typename F, typename DF>
Tensor<T> unary(const Tensor<T>& a, const char* op, F f, DF df) {
  const auto& x = a.vec();
  std::vector<T> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  auto pa = a.node();
  return make_result<T>(a.shape(), std::move(y), op, {pa}, [pa, df](Node<T>& self) {
    if (!pa->requires_grad) return;
    auto& g = pa->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * df(pa->data[i], self.data[i]);
  });
}

}  // namespace detail

// Populates grad on every requires_grad ancestor of a scalar loss.
// Gradients accumulate, so callers zero leaf grads between steps.
template <typename T>
void backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw ShapeError("backward requires a scalar loss, got " +
                     (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
  if (!loss.requires_grad()) return;

  using NodeT = detail::Node<T>;
  std::vector<NodeT*> order;
  std::unordered_set<NodeT*> seen;
  std::vector<std::pair<NodeT*, std::size_t>> stack{{loss.node().get(), 0}};
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      NodeT* p = n->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  loss.node()->ensure_grad()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    NodeT* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
}

// ---------------------------------------------------------------------------
// Elementwise arithmetic

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<T> y(a.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a[i] + b[i];
  auto pa = a.node(), pb = b.node();
  return detail::make_result<T>(a.shape(), std::move(y), "add", {pa, pb},
                                [pa, pb](detail::Node<T>& self) {
                                  for (auto* p : {pa.get(), pb.get()}) {
                                    if (!p->requires_grad) continue;
                                    auto& g = p->ensure_grad();
                                    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                                  }
                                });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<T> y(a.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a[i] - b[i];
  auto pa = a.node(), pb = b.node();
  return detail::make_result<T>(a.shape(), std::move(y), "sub", {pa, pb},
                                [pa, pb](detail::Node<T>& self) {
                                  if (pa->requires_grad) {
                                    auto& g = pa->ensure_grad();
                                    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                                  }
                                  if (pb->requires_grad) {
                                    auto& g = pb->ensure_grad();
                                    for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
                                  }
                                });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<T> y(a.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a[i] * b[i];
  auto pa = a.node(), pb = b.node();
  return detail::make_result<T>(a.shape(), std::move(y), "mul", {pa, pb},
                                [pa, pb](detail::Node<T>& self) {
                                  if (pa->requires_grad) {
                                    auto& g = pa->ensure_grad();
                                    for (std::size_t i = 0; i < g.size(); ++i)
                                      g[i] += self.grad[i] * pb->data[i];
                                  }
                                  if (pb->requires_grad) {
                                    auto& g = pb->ensure_grad();
                                    for (std::size_t i = 0; i < g.size(); ++i)
                                      g[i] += self.grad[i] * pa->data[i];
                                  }
                                });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "div");
  std::vector<T> y(a.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a[i] / b[i];
  auto pa = a.node(), pb = b.node();
  return detail::make_result<T>(a.shape(), std::move(y), "div", {pa, pb},
                                [pa, pb](detail::Node<T>& self) {
                                  if (pa->requires_grad) {
                                    auto& g = pa->ensure_grad();
                                    for (std::size_t i = 0; i < g.size(); ++i)
                                      g[i] += self.grad[i] / pb->data[i];
                                  }
                                  if (pb->requires_grad) {
                                    auto& g = pb->ensure_grad();
                                    for (std::size_t i = 0; i < g.size(); ++i)
                                      g[i] -= self.grad[i] * self.data[i] / pb->data[i];
                                  }
                                });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
  return detail::unary(a, "add_scalar", [s](T x) { return x + s; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& a, T s) {
  return detail::unary(a, "mul_scalar", [s](T x) { return x * s; }, [s](T, T) { return s; });
}

// 1 - a
template <typename T>
Tensor<T> one_minus(const Tensor<T>& a) {
  return detail::unary(a, "one_minus", [](T x) { return T(1) - x; }, [](T, T) { return T(-1); });
}

template <typename T>
Tensor<T> square(const Tensor<T>& a) {
  return detail::unary(a, "square", [](T x) { return x * x; }, [](T x, T) { return T(2) * x; });
}

// Subgradient at 0 is 0.
template <typename T>
Tensor<T> abs(const Tensor<T>& a) {
  return detail::unary(
      a, "abs", [](T x) { return std::abs(x); },
      [](T x, T) { return x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0)); });
}

// ReLU; the subgradient at exactly 0 is 0.
template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  return detail::unary(
      a, "relu", [](T x) { return x > T(0) ? x : T(0); },
      [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  return detail::unary(
      a, "sigmoid", [](T x) { return T(1) / (T(1) + std::exp(-x)); },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& a) {
  return detail::unary(
      a, "tanh", [](T x) { return std::tanh(x); }, [](T, T y) { return T(1) - y * y; });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T s = 0;
  for (T v : a.data()) s += v;
  auto pa = a.node();
  return detail::make_result<T>({1}, {s}, "sum", {pa}, [pa](detail::Node<T>& self) {
    auto& g = pa->ensure_grad();
    for (auto& v : g) v += self.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  if (a.numel() == 0) throw ShapeError("mean of empty tensor");
  T s = 0;
  for (T v : a.data()) s += v;
  const T inv = T(1) / static_cast<T>(a.numel());
  auto pa = a.node();
  return detail::make_result<T>({1}, {s * inv}, "mean", {pa}, [pa, inv](detail::Node<T>& self) {
    auto& g = pa->ensure_grad();
    for (auto& v : g) v += self.grad[0] * inv;
  });
}

// ---------------------------------------------------------------------------
// Channel manipulation on [C, H, W]

template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no inputs");
  const std::size_t h = parts[0].dim(1), w = parts[0].dim(2);
  std::size_t c = 0;
  for (const auto& p : parts) {
    detail::require_rank(p, 3, "concat_channels");
    if (p.dim(1) != h || p.dim(2) != w)
      throw ShapeError("concat_channels: spatial mismatch " + shape_str(p.shape()) + " vs " +
                       shape_str(parts[0].shape()));
    c += p.dim(0);
  }
  std::vector<T> y;
  y.reserve(c * h * w);
  std::vector<std::shared_ptr<detail::Node<T>>> nodes;
  for (const auto& p : parts) {
    y.insert(y.end(), p.data().begin(), p.data().end());
    nodes.push_back(p.node());
  }
  return detail::make_result<T>({c, h, w}, std::move(y), "concat_channels", nodes,
                                [nodes](detail::Node<T>& self) {
                                  std::size_t off = 0;
                                  for (const auto& p : nodes) {
                                    const std::size_t n = p->data.size();
                                    if (p->requires_grad) {
                                      auto& g = p->ensure_grad();
                                      for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[off + i];
                                    }
                                    off += n;
                                  }
                                });
}

template <typename T>
Tensor<T> slice_channels(const Tensor<T>& a, std::size_t begin, std::size_t count) {
  detail::require_rank(a, 3, "slice_channels");
  if (begin + count > a.dim(0) || count == 0)
    throw ShapeError("slice_channels: range out of bounds for " + shape_str(a.shape()));
  const std::size_t plane = a.dim(1) * a.dim(2);
  std::vector<T> y(a.data().begin() + begin * plane, a.data().begin() + (begin + count) * plane);
  auto pa = a.node();
  return detail::make_result<T>({count, a.dim(1), a.dim(2)}, std::move(y), "slice_channels", {pa},
                                [pa, begin, plane](detail::Node<T>& self) {
                                  auto& g = pa->ensure_grad();
                                  for (std::size_t i = 0; i < self.grad.size(); ++i)
                                    g[begin * plane + i] += self.grad[i];
                                });
}

// [1, H, W] -> [n, H, W] by copying the single plane.
template <typename T>
Tensor<T> repeat_channels(const Tensor<T>& a, std::size_t n) {
  detail::require_rank(a, 3, "repeat_channels");
  if (a.dim(0) != 1) throw ShapeError("repeat_channels expects a single channel");
  const std::size_t plane = a.numel();
  std::vector<T> y;
  y.reserve(plane * n);
  for (std::size_t c = 0; c < n; ++c) y.insert(y.end(), a.data().begin(), a.data().end());
  auto pa = a.node();
  return detail::make_result<T>({n, a.dim(1), a.dim(2)}, std::move(y), "repeat_channels", {pa},
                                [pa, plane, n](detail::Node<T>& self) {
                                  auto& g = pa->ensure_grad();
                                  for (std::size_t c = 0; c < n; ++c)
                                    for (std::size_t i = 0; i < plane; ++i)
                                      g[i] += self.grad[c * plane + i];
                                });
}

// Spatial window [y0, y0+h) x [x0, x0+w) of every channel.
template <typename T>
Tensor<T> crop(const Tensor<T>& a, std::size_t y0, std::size_t x0, std::size_t h, std::size_t w) {
  detail::require_rank(a, 3, "crop");
  const std::size_t C = a.dim(0), H = a.dim(1), W = a.dim(2);
  if (h == 0 || w == 0 || y0 + h > H || x0 + w > W)
    throw ShapeError("crop: window out of bounds for " + shape_str(a.shape()));
  std::vector<T> y(C * h * w);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < h; ++i)
      std::copy_n(a.data().begin() + (c * H + y0 + i) * W + x0, w, y.begin() + (c * h + i) * w);
  auto pa = a.node();
  return detail::make_result<T>({C, h, w}, std::move(y), "crop", {pa},
                                [pa, C, H, W, y0, x0, h, w](detail::Node<T>& self) {
                                  auto& g = pa->ensure_grad();
                                  for (std::size_t c = 0; c < C; ++c)
                                    for (std::size_t i = 0; i < h; ++i)
                                      for (std::size_t j = 0; j < w; ++j)
                                        g[(c * H + y0 + i) * W + x0 + j] += self.grad[(c * h + i) * w + j];
                                });
}

// Forward difference along x (axis = 2) or y (axis = 1); the trailing
// row/column has no successor and is dropped.
template <typename T>
Tensor<T> spatial_diff(const Tensor<T>& a, int axis) {
  detail::require_rank(a, 3, "spatial_diff");
  if (axis != 1 && axis != 2) throw std::invalid_argument("spatial_diff: axis must be 1 or 2");
  const std::size_t C = a.dim(0), H = a.dim(1), W = a.dim(2);
  const std::size_t oh = axis == 1 ? (H > 0 ? H - 1 : 0) : H;
  const std::size_t ow = axis == 2 ? (W > 0 ? W - 1 : 0) : W;
  const std::size_t step = axis == 1 ? W : 1;
  std::vector<T> y(C * oh * ow);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j) {
        const std::size_t src = (c * H + i) * W + j;
        y[(c * oh + i) * ow + j] = a[src + step] - a[src];
      }
  auto pa = a.node();
  return detail::make_result<T>({C, oh, ow}, std::move(y), "spatial_diff", {pa},
                                [pa, C, H, W, oh, ow, step](detail::Node<T>& self) {
                                  auto& g = pa->ensure_grad();
                                  for (std::size_t c = 0; c < C; ++c)
                                    for (std::size_t i = 0; i < oh; ++i)
                                      for (std::size_t j = 0; j < ow; ++j) {
                                        const std::size_t src = (c * H + i) * W + j;
                                        const T gv = self.grad[(c * oh + i) * ow + j];
                                        g[src + step] += gv;
                                        g[src] -= gv;
                                      }
                                });
}

}  // namespace afp
