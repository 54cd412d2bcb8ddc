#pragma once

// Dense row-major tensor core with reverse-mode differentiation.
// Tensors are cheap handles onto shared nodes; ops build the graph only
// while some input requires grad, so inference-mode temporaries free as
// soon as their handles drop.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "aqdet/memtrack.hpp"

namespace aqdet {

using Shape = std::vector<int64_t>;

inline int64_t numel(const Shape& shape) {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << "]";
  return os.str();
}

// Shape/contract violations.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// NaN/Inf surfaced from an op instead of propagating silently.
class NumericsError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until needed; same length as value once allocated
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  Node(Shape s, std::vector<T> v) : shape(std::move(s)), value(std::move(v)) {
    memtrack::on_alloc(value.size() * sizeof(T));
  }
  Node(const Node&) = delete;
  Node& operator=(const Node&) = delete;
  ~Node() { memtrack::on_free((value.size() + grad.size()) * sizeof(T)); }

  void ensure_grad() {
    if (grad.empty()) {
      grad.assign(value.size(), T(0));
      memtrack::on_alloc(grad.size() * sizeof(T));
    }
  }
};

template <typename T>
inline void check_finite(const std::vector<T>& v, const char* op) {
  for (const T& x : v) {
    if (!std::isfinite(static_cast<double>(x)))
      throw NumericsError(std::string(op) + ": non-finite value produced");
  }
}

}  // namespace detail

template <typename T>
class Tensor {
 public:
  using Scalar = T;

  Tensor() = default;

  static Tensor zeros(Shape shape) {
    const auto n = static_cast<std::size_t>(numel(shape));
    return Tensor(std::make_shared<detail::Node<T>>(std::move(shape), std::vector<T>(n, T(0))));
  }
  static Tensor full(Shape shape, T v) {
    const auto n = static_cast<std::size_t>(numel(shape));
    return Tensor(std::make_shared<detail::Node<T>>(std::move(shape), std::vector<T>(n, v)));
  }
  static Tensor from(Shape shape, std::vector<T> data) {
    if (static_cast<int64_t>(data.size()) != numel(shape))
      throw ShapeError("Tensor::from: data length " + std::to_string(data.size()) +
                       " does not match shape " + shape_str(shape));
    detail::check_finite(data, "Tensor::from");
    return Tensor(std::make_shared<detail::Node<T>>(std::move(shape), std::move(data)));
  }
  static Tensor scalar(T v) { return full({1}, v); }
  static Tensor uniform(Shape shape, std::mt19937_64& rng, T lo = T(0), T hi = T(1)) {
    std::uniform_real_distribution<double> dist(static_cast<double>(lo), static_cast<double>(hi));
    std::vector<T> data(static_cast<std::size_t>(numel(shape)));
    for (T& x : data) x = static_cast<T>(dist(rng));
    return Tensor(std::make_shared<detail::Node<T>>(std::move(shape), std::move(data)));
  }
  static Tensor normal(Shape shape, std::mt19937_64& rng, T mean = T(0), T stddev = T(1)) {
    std::normal_distribution<double> dist(static_cast<double>(mean), static_cast<double>(stddev));
    std::vector<T> data(static_cast<std::size_t>(numel(shape)));
    for (T& x : data) x = static_cast<T>(dist(rng));
    return Tensor(std::make_shared<detail::Node<T>>(std::move(shape), std::move(data)));
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int64_t rank() const { return static_cast<int64_t>(node_->shape.size()); }
  int64_t dim(int64_t i) const { return node_->shape[static_cast<std::size_t>(i)]; }
  int64_t size() const { return static_cast<int64_t>(node_->value.size()); }

  std::span<const T> data() const { return node_->value; }
  std::span<T> mutable_data() { return node_->value; }
  T item() const {
    if (size() != 1) throw ShapeError("item: tensor has " + std::to_string(size()) + " elements");
    return node_->value[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool rg) {
    node_->requires_grad = rg;
    if (rg) node_->ensure_grad();
    return *this;
  }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
  }

  // Value copy detached from the graph.
  Tensor clone_detached() const {
    return Tensor(std::make_shared<detail::Node<T>>(node_->shape, node_->value));
  }

  // Reverse-mode sweep from a scalar. Interior grads are reset per call;
  // leaf grads accumulate until zero_grad.
  void backward() const {
    if (size() != 1)
      throw std::invalid_argument("backward: loss must be scalar, got shape " + shape_str(shape()));
    std::vector<detail::Node<T>*> topo;
    std::unordered_set<detail::Node<T>*> seen;
    std::vector<std::pair<detail::Node<T>*, std::size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    seen.insert(node_.get());
    while (!stack.empty()) {
      auto& [n, next] = stack.back();
      if (next < n->parents.size()) {
        detail::Node<T>* p = n->parents[next++].get();
        if (p->requires_grad && !seen.count(p)) {
          seen.insert(p);
          stack.emplace_back(p, 0);
        }
      } else {
        topo.push_back(n);
        stack.pop_back();
      }
    }
    // topo is post-order: parents before children.
    for (detail::Node<T>* n : topo) {
      if (n->backward && !n->grad.empty()) std::fill(n->grad.begin(), n->grad.end(), T(0));
    }
    node_->ensure_grad();
    node_->grad[0] = T(1);
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
      detail::Node<T>* n = *it;
      if (!n->backward) continue;
      for (auto& p : n->parents)
        if (p->requires_grad) p->ensure_grad();
      n->backward(*n);
    }
  }

  detail::Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node<T>>& node_ptr() const { return node_; }

  explicit Tensor(std::shared_ptr<detail::Node<T>> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node<T>> node_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

namespace detail {

// Builds an op node: checks the produced values, wires parents and the
// backward closure only when grad is actually needed.
template <typename T>
Tensor<T> make_op(const char* name, Shape shape, std::vector<T> value,
                  std::initializer_list<Tensor<T>> inputs,
                  std::function<void(Node<T>&)> backward) {
  check_finite(value, name);
  auto node = std::make_shared<Node<T>>(std::move(shape), std::move(value));
  bool rg = false;
  for (const Tensor<T>& t : inputs) rg |= t.requires_grad();
  if (rg) {
    node->requires_grad = true;
    node->parents.reserve(inputs.size());
    for (const Tensor<T>& t : inputs) node->parents.push_back(t.node_ptr());
    node->backward = std::move(backward);
  }
  return Tensor<T>(node);
}

template <typename T>
void require_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise ops

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape("add", a, b);
  std::vector<T> out(a.data().begin(), a.data().end());
  for (int64_t i = 0; i < b.size(); ++i) out[static_cast<std::size_t>(i)] += b.data()[i];
  auto* an = a.node();
  auto* bn = b.node();
  return detail::make_op<T>("add", a.shape(), std::move(out), {a, b}, [an, bn](detail::Node<T>& n) {
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      if (an->requires_grad) an->grad[i] += n.grad[i];
      if (bn->requires_grad) bn->grad[i] += n.grad[i];
    }
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape("sub", a, b);
  std::vector<T> out(a.data().begin(), a.data().end());
  for (int64_t i = 0; i < b.size(); ++i) out[static_cast<std::size_t>(i)] -= b.data()[i];
  auto* an = a.node();
  auto* bn = b.node();
  return detail::make_op<T>("sub", a.shape(), std::move(out), {a, b}, [an, bn](detail::Node<T>& n) {
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      if (an->requires_grad) an->grad[i] += n.grad[i];
      if (bn->requires_grad) bn->grad[i] -= n.grad[i];
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape("mul", a, b);
  std::vector<T> out(static_cast<std::size_t>(a.size()));
  for (int64_t i = 0; i < a.size(); ++i)
    out[static_cast<std::size_t>(i)] = a.data()[i] * b.data()[i];
  auto* an = a.node();
  auto* bn = b.node();
  return detail::make_op<T>("mul", a.shape(), std::move(out), {a, b}, [an, bn](detail::Node<T>& n) {
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      if (an->requires_grad) an->grad[i] += n.grad[i] * bn->value[i];
      if (bn->requires_grad) bn->grad[i] += n.grad[i] * an->value[i];
    }
  });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape("div", a, b);
  std::vector<T> out(static_cast<std::size_t>(a.size()));
  for (int64_t i = 0; i < a.size(); ++i)
    out[static_cast<std::size_t>(i)] = a.data()[i] / b.data()[i];
  auto* an = a.node();
  auto* bn = b.node();
  return detail::make_op<T>("div", a.shape(), std::move(out), {a, b}, [an, bn](detail::Node<T>& n) {
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      const T inv = T(1) / bn->value[i];
      if (an->requires_grad) an->grad[i] += n.grad[i] * inv;
      if (bn->requires_grad) bn->grad[i] -= n.grad[i] * an->value[i] * inv * inv;
    }
  });
}

// Elementwise min/max; ties route the gradient to the first argument.
template <typename T>
Tensor<T> emin(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape("emin", a, b);
  std::vector<T> out(static_cast<std::size_t>(a.size()));
  for (int64_t i = 0; i < a.size(); ++i)
    out[static_cast<std::size_t>(i)] = std::min(a.data()[i], b.data()[i]);
  auto* an = a.node();
  auto* bn = b.node();
  return detail::make_op<T>("emin", a.shape(), std::move(out), {a, b},
                            [an, bn](detail::Node<T>& n) {
                              for (std::size_t i = 0; i < n.grad.size(); ++i) {
                                if (an->value[i] <= bn->value[i]) {
                                  if (an->requires_grad) an->grad[i] += n.grad[i];
                                } else if (bn->requires_grad) {
                                  bn->grad[i] += n.grad[i];
                                }
                              }
                            });
}

template <typename T>
Tensor<T> emax(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape("emax", a, b);
  std::vector<T> out(static_cast<std::size_t>(a.size()));
  for (int64_t i = 0; i < a.size(); ++i)
    out[static_cast<std::size_t>(i)] = std::max(a.data()[i], b.data()[i]);
  auto* an = a.node();
  auto* bn = b.node();
  return detail::make_op<T>("emax", a.shape(), std::move(out), {a, b},
                            [an, bn](detail::Node<T>& n) {
                              for (std::size_t i = 0; i < n.grad.size(); ++i) {
                                if (an->value[i] >= bn->value[i]) {
                                  if (an->requires_grad) an->grad[i] += n.grad[i];
                                } else if (bn->requires_grad) {
                                  bn->grad[i] += n.grad[i];
                                }
                              }
                            });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  std::vector<T> out(static_cast<std::size_t>(x.size()));
  for (int64_t i = 0; i < x.size(); ++i)
    out[static_cast<std::size_t>(i)] = x.data()[i] > T(0) ? x.data()[i] : T(0);
  auto* xn = x.node();
  return detail::make_op<T>("relu", x.shape(), std::move(out), {x}, [xn](detail::Node<T>& n) {
    for (std::size_t i = 0; i < n.grad.size(); ++i)
      if (xn->value[i] > T(0)) xn->grad[i] += n.grad[i];
  });
}

template <typename T>
Tensor<T> abs(const Tensor<T>& x) {
  std::vector<T> out(static_cast<std::size_t>(x.size()));
  for (int64_t i = 0; i < x.size(); ++i) out[static_cast<std::size_t>(i)] = std::abs(x.data()[i]);
  auto* xn = x.node();
  return detail::make_op<T>("abs", x.shape(), std::move(out), {x}, [xn](detail::Node<T>& n) {
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      if (xn->value[i] > T(0))
        xn->grad[i] += n.grad[i];
      else if (xn->value[i] < T(0))
        xn->grad[i] -= n.grad[i];
    }
  });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  std::vector<T> out(static_cast<std::size_t>(x.size()));
  for (int64_t i = 0; i < x.size(); ++i) {
    const double v = static_cast<double>(x.data()[i]);
    out[static_cast<std::size_t>(i)] =
        static_cast<T>(v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)));
  }
  auto* xn = x.node();
  return detail::make_op<T>("sigmoid", x.shape(), std::move(out), {x}, [xn](detail::Node<T>& n) {
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      const T y = n.value[i];
      xn->grad[i] += n.grad[i] * y * (T(1) - y);
    }
  });
}

// logit with the input clamped to [eps, 1-eps]; clamped elements get zero grad.
template <typename T>
Tensor<T> inverse_sigmoid(const Tensor<T>& x, T eps = T(1e-5)) {
  std::vector<T> out(static_cast<std::size_t>(x.size()));
  for (int64_t i = 0; i < x.size(); ++i) {
    const T c = std::clamp(x.data()[i], eps, T(1) - eps);
    out[static_cast<std::size_t>(i)] = std::log(c / (T(1) - c));
  }
  auto* xn = x.node();
  return detail::make_op<T>(
      "inverse_sigmoid", x.shape(), std::move(out), {x}, [xn, eps](detail::Node<T>& n) {
        for (std::size_t i = 0; i < n.grad.size(); ++i) {
          const T v = xn->value[i];
          if (v > eps && v < T(1) - eps) xn->grad[i] += n.grad[i] / (v * (T(1) - v));
        }
      });
}

template <typename T>
Tensor<T> log(const Tensor<T>& x) {
  std::vector<T> out(static_cast<std::size_t>(x.size()));
  for (int64_t i = 0; i < x.size(); ++i) out[static_cast<std::size_t>(i)] = std::log(x.data()[i]);
  auto* xn = x.node();
  return detail::make_op<T>("log", x.shape(), std::move(out), {x}, [xn](detail::Node<T>& n) {
    for (std::size_t i = 0; i < n.grad.size(); ++i) xn->grad[i] += n.grad[i] / xn->value[i];
  });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& x) {
  std::vector<T> out(static_cast<std::size_t>(x.size()));
  for (int64_t i = 0; i < x.size(); ++i) out[static_cast<std::size_t>(i)] = std::exp(x.data()[i]);
  auto* xn = x.node();
  return detail::make_op<T>("exp", x.shape(), std::move(out), {x}, [xn](detail::Node<T>& n) {
    for (std::size_t i = 0; i < n.grad.size(); ++i) xn->grad[i] += n.grad[i] * n.value[i];
  });
}

// log(1 + e^x), evaluated without overflow.
template <typename T>
Tensor<T> softplus(const Tensor<T>& x) {
  std::vector<T> out(static_cast<std::size_t>(x.size()));
  for (int64_t i = 0; i < x.size(); ++i) {
    const double v = static_cast<double>(x.data()[i]);
    out[static_cast<std::size_t>(i)] =
        static_cast<T>(v > 0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v)));
  }
  auto* xn = x.node();
  return detail::make_op<T>("softplus", x.shape(), std::move(out), {x}, [xn](detail::Node<T>& n) {
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      const double v = static_cast<double>(xn->value[i]);
      const double s = v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
      xn->grad[i] += n.grad[i] * static_cast<T>(s);
    }
  });
}

template <typename T>
Tensor<T> pow_scalar(const Tensor<T>& x, T p) {
  std::vector<T> out(static_cast<std::size_t>(x.size()));
  for (int64_t i = 0; i < x.size(); ++i)
    out[static_cast<std::size_t>(i)] = std::pow(x.data()[i], p);
  auto* xn = x.node();
  return detail::make_op<T>("pow_scalar", x.shape(), std::move(out), {x},
                            [xn, p](detail::Node<T>& n) {
                              for (std::size_t i = 0; i < n.grad.size(); ++i)
                                xn->grad[i] += n.grad[i] * p * std::pow(xn->value[i], p - T(1));
                            });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T c) {
  std::vector<T> out(x.data().begin(), x.data().end());
  for (T& v : out) v += c;
  auto* xn = x.node();
  return detail::make_op<T>("add_scalar", x.shape(), std::move(out), {x},
                            [xn](detail::Node<T>& n) {
                              for (std::size_t i = 0; i < n.grad.size(); ++i)
                                xn->grad[i] += n.grad[i];
                            });
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& x, T c) {
  std::vector<T> out(x.data().begin(), x.data().end());
  for (T& v : out) v *= c;
  auto* xn = x.node();
  return detail::make_op<T>("mul_scalar", x.shape(), std::move(out), {x},
                            [xn, c](detail::Node<T>& n) {
                              for (std::size_t i = 0; i < n.grad.size(); ++i)
                                xn->grad[i] += n.grad[i] * c;
                            });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T acc = T(0);
  for (const T v : x.data()) acc += v;
  auto* xn = x.node();
  return detail::make_op<T>("sum", {1}, {acc}, {x}, [xn](detail::Node<T>& n) {
    for (std::size_t i = 0; i < xn->grad.size(); ++i) xn->grad[i] += n.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  T acc = T(0);
  for (const T v : x.data()) acc += v;
  const T inv = T(1) / static_cast<T>(x.size());
  auto* xn = x.node();
  return detail::make_op<T>("mean", {1}, {acc * inv}, {x}, [xn, inv](detail::Node<T>& n) {
    for (std::size_t i = 0; i < xn->grad.size(); ++i) xn->grad[i] += n.grad[0] * inv;
  });
}

// Numerically stabilized softmax along `axis`; each slice sums to 1.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int64_t axis) {
  const auto& shape = x.shape();
  if (axis < 0 || axis >= x.rank())
    throw ShapeError("softmax: axis " + std::to_string(axis) + " out of range for " +
                     shape_str(shape));
  int64_t outer = 1, inner = 1;
  for (int64_t i = 0; i < axis; ++i) outer *= shape[static_cast<std::size_t>(i)];
  for (int64_t i = axis + 1; i < x.rank(); ++i) inner *= shape[static_cast<std::size_t>(i)];
  const int64_t len = shape[static_cast<std::size_t>(axis)];

  std::vector<T> out(static_cast<std::size_t>(x.size()));
  const auto src = x.data();
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t in = 0; in < inner; ++in) {
      const int64_t base = o * len * inner + in;
      T mx = src[base];
      for (int64_t k = 1; k < len; ++k) mx = std::max(mx, src[base + k * inner]);
      T denom = T(0);
      for (int64_t k = 0; k < len; ++k) {
        const T e = std::exp(src[base + k * inner] - mx);
        out[static_cast<std::size_t>(base + k * inner)] = e;
        denom += e;
      }
      const T inv = T(1) / denom;
      for (int64_t k = 0; k < len; ++k) out[static_cast<std::size_t>(base + k * inner)] *= inv;
    }
  }
  auto* xn = x.node();
  return detail::make_op<T>("softmax", shape, std::move(out), {x},
                            [xn, outer, inner, len](detail::Node<T>& n) {
                              for (int64_t o = 0; o < outer; ++o) {
                                for (int64_t in = 0; in < inner; ++in) {
                                  const int64_t base = o * len * inner + in;
                                  T dot = T(0);
                                  for (int64_t k = 0; k < len; ++k) {
                                    const auto idx = static_cast<std::size_t>(base + k * inner);
                                    dot += n.grad[idx] * n.value[idx];
                                  }
                                  for (int64_t k = 0; k < len; ++k) {
                                    const auto idx = static_cast<std::size_t>(base + k * inner);
                                    xn->grad[idx] += n.value[idx] * (n.grad[idx] - dot);
                                  }
                                }
                              }
                            });
}

enum class PoolAxis { H, W };

// 1D global average pooling of a [H,W,C] map; over H it yields the [W,C]
// row feature, over W the [H,C] column feature.
template <typename T>
Tensor<T> mean_pool(const Tensor<T>& x, PoolAxis axis) {
  if (x.rank() != 3) throw ShapeError("mean_pool: expected rank-3 input, got " + shape_str(x.shape()));
  const int64_t H = x.dim(0), W = x.dim(1), C = x.dim(2);
  const auto src = x.data();
  if (axis == PoolAxis::H) {
    std::vector<T> out(static_cast<std::size_t>(W * C), T(0));
    for (int64_t i = 0; i < H; ++i)
      for (int64_t j = 0; j < W; ++j)
        for (int64_t c = 0; c < C; ++c)
          out[static_cast<std::size_t>(j * C + c)] += src[(i * W + j) * C + c];
    const T inv = T(1) / static_cast<T>(H);
    for (T& v : out) v *= inv;
    auto* xn = x.node();
    return detail::make_op<T>("mean_pool", {W, C}, std::move(out), {x},
                              [xn, H, W, C, inv](detail::Node<T>& n) {
                                for (int64_t i = 0; i < H; ++i)
                                  for (int64_t j = 0; j < W; ++j)
                                    for (int64_t c = 0; c < C; ++c)
                                      xn->grad[static_cast<std::size_t>((i * W + j) * C + c)] +=
                                          n.grad[static_cast<std::size_t>(j * C + c)] * inv;
                              });
  }
  std::vector<T> out(static_cast<std::size_t>(H * C), T(0));
  for (int64_t i = 0; i < H; ++i)
    for (int64_t j = 0; j < W; ++j)
      for (int64_t c = 0; c < C; ++c)
        out[static_cast<std::size_t>(i * C + c)] += src[(i * W + j) * C + c];
  const T inv = T(1) / static_cast<T>(W);
  for (T& v : out) v *= inv;
  auto* xn = x.node();
  return detail::make_op<T>("mean_pool", {H, C}, std::move(out), {x},
                            [xn, H, W, C, inv](detail::Node<T>& n) {
                              for (int64_t i = 0; i < H; ++i)
                                for (int64_t j = 0; j < W; ++j)
                                  for (int64_t c = 0; c < C; ++c)
                                    xn->grad[static_cast<std::size_t>((i * W + j) * C + c)] +=
                                        n.grad[static_cast<std::size_t>(i * C + c)] * inv;
                            });
}

// ---------------------------------------------------------------------------
// Structural ops

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (numel(shape) != x.size())
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  std::vector<T> out(x.data().begin(), x.data().end());
  auto* xn = x.node();
  return detail::make_op<T>("reshape", std::move(shape), std::move(out), {x},
                            [xn](detail::Node<T>& n) {
                              for (std::size_t i = 0; i < n.grad.size(); ++i)
                                xn->grad[i] += n.grad[i];
                            });
}

template <typename T>
Tensor<T> transpose2d(const Tensor<T>& x) {
  if (x.rank() != 2) throw ShapeError("transpose2d: expected rank-2, got " + shape_str(x.shape()));
  const int64_t m = x.dim(0), n_ = x.dim(1);
  std::vector<T> out(static_cast<std::size_t>(m * n_));
  const auto src = x.data();
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n_; ++j) out[static_cast<std::size_t>(j * m + i)] = src[i * n_ + j];
  auto* xn = x.node();
  return detail::make_op<T>("transpose2d", {n_, m}, std::move(out), {x},
                            [xn, m, n_](detail::Node<T>& n) {
                              for (int64_t i = 0; i < m; ++i)
                                for (int64_t j = 0; j < n_; ++j)
                                  xn->grad[static_cast<std::size_t>(i * n_ + j)] +=
                                      n.grad[static_cast<std::size_t>(j * m + i)];
                            });
}

// Swap the two spatial axes of a [H,W,C] map.
template <typename T>
Tensor<T> transpose_hw(const Tensor<T>& x) {
  if (x.rank() != 3) throw ShapeError("transpose_hw: expected rank-3, got " + shape_str(x.shape()));
  const int64_t H = x.dim(0), W = x.dim(1), C = x.dim(2);
  std::vector<T> out(static_cast<std::size_t>(H * W * C));
  const auto src = x.data();
  for (int64_t i = 0; i < H; ++i)
    for (int64_t j = 0; j < W; ++j)
      for (int64_t c = 0; c < C; ++c)
        out[static_cast<std::size_t>((j * H + i) * C + c)] = src[(i * W + j) * C + c];
  auto* xn = x.node();
  return detail::make_op<T>("transpose_hw", {W, H, C}, std::move(out), {x},
                            [xn, H, W, C](detail::Node<T>& n) {
                              for (int64_t i = 0; i < H; ++i)
                                for (int64_t j = 0; j < W; ++j)
                                  for (int64_t c = 0; c < C; ++c)
                                    xn->grad[static_cast<std::size_t>((i * W + j) * C + c)] +=
                                        n.grad[static_cast<std::size_t>((j * H + i) * C + c)];
                            });
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, int64_t start, int64_t len) {
  if (x.rank() != 2) throw ShapeError("slice_cols: expected rank-2, got " + shape_str(x.shape()));
  const int64_t rows = x.dim(0), cols = x.dim(1);
  if (start < 0 || len <= 0 || start + len > cols)
    throw ShapeError("slice_cols: range [" + std::to_string(start) + "," +
                     std::to_string(start + len) + ") out of bounds for " + shape_str(x.shape()));
  std::vector<T> out(static_cast<std::size_t>(rows * len));
  const auto src = x.data();
  for (int64_t i = 0; i < rows; ++i)
    for (int64_t j = 0; j < len; ++j)
      out[static_cast<std::size_t>(i * len + j)] = src[i * cols + start + j];
  auto* xn = x.node();
  return detail::make_op<T>("slice_cols", {rows, len}, std::move(out), {x},
                            [xn, rows, cols, start, len](detail::Node<T>& n) {
                              for (int64_t i = 0; i < rows; ++i)
                                for (int64_t j = 0; j < len; ++j)
                                  xn->grad[static_cast<std::size_t>(i * cols + start + j)] +=
                                      n.grad[static_cast<std::size_t>(i * len + j)];
                            });
}

template <typename T>
Tensor<T> concat_cols(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(0) != b.dim(0))
    throw ShapeError("concat_cols: incompatible shapes " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  const int64_t rows = a.dim(0), ca = a.dim(1), cb = b.dim(1);
  std::vector<T> out(static_cast<std::size_t>(rows * (ca + cb)));
  for (int64_t i = 0; i < rows; ++i) {
    for (int64_t j = 0; j < ca; ++j)
      out[static_cast<std::size_t>(i * (ca + cb) + j)] = a.data()[i * ca + j];
    for (int64_t j = 0; j < cb; ++j)
      out[static_cast<std::size_t>(i * (ca + cb) + ca + j)] = b.data()[i * cb + j];
  }
  auto* an = a.node();
  auto* bn = b.node();
  return detail::make_op<T>("concat_cols", {rows, ca + cb}, std::move(out), {a, b},
                            [an, bn, rows, ca, cb](detail::Node<T>& n) {
                              for (int64_t i = 0; i < rows; ++i) {
                                if (an->requires_grad)
                                  for (int64_t j = 0; j < ca; ++j)
                                    an->grad[static_cast<std::size_t>(i * ca + j)] +=
                                        n.grad[static_cast<std::size_t>(i * (ca + cb) + j)];
                                if (bn->requires_grad)
                                  for (int64_t j = 0; j < cb; ++j)
                                    bn->grad[static_cast<std::size_t>(i * cb + j)] +=
                                        n.grad[static_cast<std::size_t>(i * (ca + cb) + ca + j)];
                              }
                            });
}

// Repeats the whole row block `times` times: out row k = x row (k mod rows).
template <typename T>
Tensor<T> tile_rows(const Tensor<T>& x, int64_t times) {
  if (x.rank() != 2) throw ShapeError("tile_rows: expected rank-2, got " + shape_str(x.shape()));
  if (times < 1) throw ShapeError("tile_rows: times must be >= 1");
  const int64_t rows = x.dim(0), cols = x.dim(1);
  std::vector<T> out(static_cast<std::size_t>(rows * times * cols));
  for (int64_t t = 0; t < times; ++t)
    std::copy(x.data().begin(), x.data().end(), out.begin() + static_cast<std::ptrdiff_t>(t * rows * cols));
  auto* xn = x.node();
  return detail::make_op<T>("tile_rows", {rows * times, cols}, std::move(out), {x},
                            [xn, rows, cols, times](detail::Node<T>& n) {
                              for (int64_t t = 0; t < times; ++t)
                                for (int64_t i = 0; i < rows * cols; ++i)
                                  xn->grad[static_cast<std::size_t>(i)] +=
                                      n.grad[static_cast<std::size_t>(t * rows * cols + i)];
                            });
}

// Repeats each row `times` consecutive times: out row k = x row (k / times).
template <typename T>
Tensor<T> repeat_rows(const Tensor<T>& x, int64_t times) {
  if (x.rank() != 2) throw ShapeError("repeat_rows: expected rank-2, got " + shape_str(x.shape()));
  if (times < 1) throw ShapeError("repeat_rows: times must be >= 1");
  const int64_t rows = x.dim(0), cols = x.dim(1);
  std::vector<T> out(static_cast<std::size_t>(rows * times * cols));
  for (int64_t i = 0; i < rows; ++i)
    for (int64_t t = 0; t < times; ++t)
      std::copy(x.data().begin() + static_cast<std::ptrdiff_t>(i * cols),
                x.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * cols),
                out.begin() + static_cast<std::ptrdiff_t>((i * times + t) * cols));
  auto* xn = x.node();
  return detail::make_op<T>("repeat_rows", {rows * times, cols}, std::move(out), {x},
                            [xn, rows, cols, times](detail::Node<T>& n) {
                              for (int64_t i = 0; i < rows; ++i)
                                for (int64_t t = 0; t < times; ++t)
                                  for (int64_t j = 0; j < cols; ++j)
                                    xn->grad[static_cast<std::size_t>(i * cols + j)] +=
                                        n.grad[static_cast<std::size_t>((i * times + t) * cols + j)];
                            });
}

// Row gather; duplicate indices accumulate grads.
template <typename T>
Tensor<T> select_rows(const Tensor<T>& x, const std::vector<int64_t>& idx) {
  if (x.rank() != 2) throw ShapeError("select_rows: expected rank-2, got " + shape_str(x.shape()));
  const int64_t rows = x.dim(0), cols = x.dim(1);
  for (int64_t k : idx)
    if (k < 0 || k >= rows)
      throw ShapeError("select_rows: index " + std::to_string(k) + " out of range [0," +
                       std::to_string(rows) + ")");
  std::vector<T> out(idx.size() * static_cast<std::size_t>(cols));
  for (std::size_t k = 0; k < idx.size(); ++k)
    std::copy(x.data().begin() + static_cast<std::ptrdiff_t>(idx[k] * cols),
              x.data().begin() + static_cast<std::ptrdiff_t>((idx[k] + 1) * cols),
              out.begin() + static_cast<std::ptrdiff_t>(k * static_cast<std::size_t>(cols)));
  auto* xn = x.node();
  auto indices = idx;
  return detail::make_op<T>("select_rows", {static_cast<int64_t>(idx.size()), cols},
                            std::move(out), {x},
                            [xn, cols, indices = std::move(indices)](detail::Node<T>& n) {
                              for (std::size_t k = 0; k < indices.size(); ++k)
                                for (int64_t j = 0; j < cols; ++j)
                                  xn->grad[static_cast<std::size_t>(indices[k] * cols + j)] +=
                                      n.grad[k * static_cast<std::size_t>(cols) +
                                             static_cast<std::size_t>(j)];
                            });
}

// ---------------------------------------------------------------------------
// Linear algebra

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  const int64_t m = a.dim(0), k = a.dim(1), n_ = b.dim(1);
  std::vector<T> out(static_cast<std::size_t>(m * n_), T(0));
  const auto ad = a.data();
  const auto bd = b.data();
  for (int64_t i = 0; i < m; ++i)
    for (int64_t p = 0; p < k; ++p) {
      const T av = ad[i * k + p];
      if (av == T(0)) continue;
      for (int64_t j = 0; j < n_; ++j) out[static_cast<std::size_t>(i * n_ + j)] += av * bd[p * n_ + j];
    }
  auto* an = a.node();
  auto* bn = b.node();
  return detail::make_op<T>("matmul", {m, n_}, std::move(out), {a, b},
                            [an, bn, m, k, n_](detail::Node<T>& n) {
                              if (an->requires_grad) {
                                // dA += dC * B^T
                                for (int64_t i = 0; i < m; ++i)
                                  for (int64_t j = 0; j < n_; ++j) {
                                    const T g = n.grad[static_cast<std::size_t>(i * n_ + j)];
                                    if (g == T(0)) continue;
                                    for (int64_t p = 0; p < k; ++p)
                                      an->grad[static_cast<std::size_t>(i * k + p)] +=
                                          g * bn->value[static_cast<std::size_t>(p * n_ + j)];
                                  }
                              }
                              if (bn->requires_grad) {
                                // dB += A^T * dC
                                for (int64_t i = 0; i < m; ++i)
                                  for (int64_t p = 0; p < k; ++p) {
                                    const T av = an->value[static_cast<std::size_t>(i * k + p)];
                                    if (av == T(0)) continue;
                                    for (int64_t j = 0; j < n_; ++j)
                                      bn->grad[static_cast<std::size_t>(p * n_ + j)] +=
                                          av * n.grad[static_cast<std::size_t>(i * n_ + j)];
                                  }
                              }
                            });
}

// y = x * W^T + b with W [out,in], b [out]; x may be [N,in] or [.., in].
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  if (x.rank() < 1 || weight.rank() != 2 || bias.rank() != 1)
    throw ShapeError("linear: bad ranks");
  const int64_t in = weight.dim(1), out_dim = weight.dim(0);
  if (x.dim(x.rank() - 1) != in || bias.dim(0) != out_dim)
    throw ShapeError("linear: incompatible shapes x" + shape_str(x.shape()) + " W" +
                     shape_str(weight.shape()) + " b" + shape_str(bias.shape()));
  const int64_t rows = x.size() / in;
  std::vector<T> out(static_cast<std::size_t>(rows * out_dim));
  const auto xd = x.data();
  const auto wd = weight.data();
  const auto bd = bias.data();
  for (int64_t i = 0; i < rows; ++i)
    for (int64_t o = 0; o < out_dim; ++o) {
      T acc = bd[o];
      for (int64_t p = 0; p < in; ++p) acc += xd[i * in + p] * wd[o * in + p];
      out[static_cast<std::size_t>(i * out_dim + o)] = acc;
    }
  Shape oshape = x.shape();
  oshape.back() = out_dim;
  auto* xn = x.node();
  auto* wn = weight.node();
  auto* bn = bias.node();
  return detail::make_op<T>(
      "linear", std::move(oshape), std::move(out), {x, weight, bias},
      [xn, wn, bn, rows, in, out_dim](detail::Node<T>& n) {
        for (int64_t i = 0; i < rows; ++i)
          for (int64_t o = 0; o < out_dim; ++o) {
            const T g = n.grad[static_cast<std::size_t>(i * out_dim + o)];
            if (g == T(0)) continue;
            if (bn->requires_grad) bn->grad[static_cast<std::size_t>(o)] += g;
            for (int64_t p = 0; p < in; ++p) {
              if (xn->requires_grad)
                xn->grad[static_cast<std::size_t>(i * in + p)] +=
                    g * wn->value[static_cast<std::size_t>(o * in + p)];
              if (wn->requires_grad)
                wn->grad[static_cast<std::size_t>(o * in + p)] +=
                    g * xn->value[static_cast<std::size_t>(i * in + p)];
            }
          }
      });
}

// Normalization over the trailing axis with learnable gain/shift.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps = T(1e-5)) {
  const int64_t C = x.dim(x.rank() - 1);
  if (gamma.size() != C || beta.size() != C)
    throw ShapeError("layer_norm: gain/shift must have " + std::to_string(C) + " elements");
  const int64_t rows = x.size() / C;
  std::vector<T> out(static_cast<std::size_t>(x.size()));
  std::vector<T> inv_std(static_cast<std::size_t>(rows));
  std::vector<T> mean_row(static_cast<std::size_t>(rows));
  const auto xd = x.data();
  const auto gd = gamma.data();
  const auto bd = beta.data();
  for (int64_t i = 0; i < rows; ++i) {
    T mu = T(0);
    for (int64_t c = 0; c < C; ++c) mu += xd[i * C + c];
    mu /= static_cast<T>(C);
    T var = T(0);
    for (int64_t c = 0; c < C; ++c) {
      const T d = xd[i * C + c] - mu;
      var += d * d;
    }
    var /= static_cast<T>(C);
    const T is = T(1) / std::sqrt(var + eps);
    inv_std[static_cast<std::size_t>(i)] = is;
    mean_row[static_cast<std::size_t>(i)] = mu;
    for (int64_t c = 0; c < C; ++c)
      out[static_cast<std::size_t>(i * C + c)] = gd[c] * (xd[i * C + c] - mu) * is + bd[c];
  }
  auto* xn = x.node();
  auto* gn = gamma.node();
  auto* bn = beta.node();
  return detail::make_op<T>(
      "layer_norm", x.shape(), std::move(out), {x, gamma, beta},
      [xn, gn, bn, rows, C, inv_std = std::move(inv_std),
       mean_row = std::move(mean_row)](detail::Node<T>& n) {
        for (int64_t i = 0; i < rows; ++i) {
          const T is = inv_std[static_cast<std::size_t>(i)];
          const T mu = mean_row[static_cast<std::size_t>(i)];
          T sum_dxhat = T(0), sum_dxhat_xhat = T(0);
          for (int64_t c = 0; c < C; ++c) {
            const auto idx = static_cast<std::size_t>(i * C + c);
            const T xhat = (xn->value[idx] - mu) * is;
            const T dy = n.grad[idx];
            if (gn->requires_grad) gn->grad[static_cast<std::size_t>(c)] += dy * xhat;
            if (bn->requires_grad) bn->grad[static_cast<std::size_t>(c)] += dy;
            const T dxhat = dy * gn->value[static_cast<std::size_t>(c)];
            sum_dxhat += dxhat;
            sum_dxhat_xhat += dxhat * xhat;
          }
          if (xn->requires_grad) {
            const T invC = T(1) / static_cast<T>(C);
            for (int64_t c = 0; c < C; ++c) {
              const auto idx = static_cast<std::size_t>(i * C + c);
              const T xhat = (xn->value[idx] - mu) * is;
              const T dxhat = n.grad[idx] * gn->value[static_cast<std::size_t>(c)];
              xn->grad[idx] += is * (dxhat - invC * sum_dxhat - xhat * invC * sum_dxhat_xhat);
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Fused attention kernels. The weight map for all heads is materialized as a
// single [M, n_q, n_k] buffer; the row softmax runs in place on the logits,
// so the map costs exactly one buffer.

template <typename T>
Tensor<T> mha_weights(const Tensor<T>& q, const Tensor<T>& k, int64_t heads) {
  if (q.rank() != 2 || k.rank() != 2 || q.dim(1) != k.dim(1))
    throw ShapeError("mha_weights: incompatible shapes " + shape_str(q.shape()) + " vs " +
                     shape_str(k.shape()));
  const int64_t C = q.dim(1);
  if (heads < 1 || C % heads != 0)
    throw ShapeError("mha_weights: channels " + std::to_string(C) + " not divisible by heads " +
                     std::to_string(heads));
  const int64_t nq = q.dim(0), nk = k.dim(0), dk = C / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(dk));
  std::vector<T> a(static_cast<std::size_t>(heads * nq * nk));
  const auto qd = q.data();
  const auto kd = k.data();
  for (int64_t h = 0; h < heads; ++h) {
    const int64_t off = h * dk;
    for (int64_t i = 0; i < nq; ++i) {
      T* row = a.data() + (h * nq + i) * nk;
      for (int64_t j = 0; j < nk; ++j) {
        T acc = T(0);
        for (int64_t c = 0; c < dk; ++c) acc += qd[i * C + off + c] * kd[j * C + off + c];
        row[j] = acc * scale;
      }
      // in-place softmax over the key axis
      T mx = row[0];
      for (int64_t j = 1; j < nk; ++j) mx = std::max(mx, row[j]);
      T denom = T(0);
      for (int64_t j = 0; j < nk; ++j) {
        row[j] = std::exp(row[j] - mx);
        denom += row[j];
      }
      const T inv = T(1) / denom;
      for (int64_t j = 0; j < nk; ++j) row[j] *= inv;
    }
  }
  auto* qn = q.node();
  auto* kn = k.node();
  return detail::make_op<T>(
      "mha_weights", {heads, nq, nk}, std::move(a), {q, k},
      [qn, kn, heads, nq, nk, dk, C, scale](detail::Node<T>& n) {
        std::vector<T> grow(static_cast<std::size_t>(nk));
        for (int64_t h = 0; h < heads; ++h) {
          const int64_t off = h * dk;
          for (int64_t i = 0; i < nq; ++i) {
            const T* arow = n.value.data() + (h * nq + i) * nk;
            const T* gr = n.grad.data() + (h * nq + i) * nk;
            T dot = T(0);
            for (int64_t j = 0; j < nk; ++j) dot += gr[j] * arow[j];
            for (int64_t j = 0; j < nk; ++j) grow[static_cast<std::size_t>(j)] =
                arow[j] * (gr[j] - dot) * scale;
            for (int64_t j = 0; j < nk; ++j) {
              const T gl = grow[static_cast<std::size_t>(j)];
              if (gl == T(0)) continue;
              for (int64_t c = 0; c < dk; ++c) {
                if (qn->requires_grad)
                  qn->grad[static_cast<std::size_t>(i * C + off + c)] +=
                      gl * kn->value[static_cast<std::size_t>(j * C + off + c)];
                if (kn->requires_grad)
                  kn->grad[static_cast<std::size_t>(j * C + off + c)] +=
                      gl * qn->value[static_cast<std::size_t>(i * C + off + c)];
              }
            }
          }
        }
      });
}

// Per-head weighted sum of value rows; heads re-concatenated to [n_q, C].
template <typename T>
Tensor<T> attention_combine(const Tensor<T>& a, const Tensor<T>& v) {
  if (a.rank() != 3 || v.rank() != 2 || a.dim(2) != v.dim(0))
    throw ShapeError("attention_combine: incompatible shapes " + shape_str(a.shape()) + " vs " +
                     shape_str(v.shape()));
  const int64_t heads = a.dim(0), nq = a.dim(1), nk = a.dim(2), C = v.dim(1);
  if (C % heads != 0) throw ShapeError("attention_combine: channels not divisible by heads");
  const int64_t dk = C / heads;
  std::vector<T> out(static_cast<std::size_t>(nq * C), T(0));
  const auto ad = a.data();
  const auto vd = v.data();
  for (int64_t h = 0; h < heads; ++h) {
    const int64_t off = h * dk;
    for (int64_t i = 0; i < nq; ++i)
      for (int64_t j = 0; j < nk; ++j) {
        const T w = ad[(h * nq + i) * nk + j];
        if (w == T(0)) continue;
        for (int64_t c = 0; c < dk; ++c)
          out[static_cast<std::size_t>(i * C + off + c)] += w * vd[j * C + off + c];
      }
  }
  auto* an = a.node();
  auto* vn = v.node();
  return detail::make_op<T>(
      "attention_combine", {nq, C}, std::move(out), {a, v},
      [an, vn, heads, nq, nk, dk, C](detail::Node<T>& n) {
        for (int64_t h = 0; h < heads; ++h) {
          const int64_t off = h * dk;
          for (int64_t i = 0; i < nq; ++i)
            for (int64_t j = 0; j < nk; ++j) {
              const auto aidx = static_cast<std::size_t>((h * nq + i) * nk + j);
              T da = T(0);
              for (int64_t c = 0; c < dk; ++c) {
                const T g = n.grad[static_cast<std::size_t>(i * C + off + c)];
                da += g * vn->value[static_cast<std::size_t>(j * C + off + c)];
                if (vn->requires_grad)
                  vn->grad[static_cast<std::size_t>(j * C + off + c)] += an->value[aidx] * g;
              }
              if (an->requires_grad) an->grad[aidx] += da;
            }
        }
      });
}

// Contraction of row-attention weights [M,n_q,W] with values [H,W,C] over W,
// producing the per-query row-collapsed feature [n_q,H,C].
template <typename T>
Tensor<T> weighted_sum_w(const Tensor<T>& a, const Tensor<T>& v) {
  if (a.rank() != 3 || v.rank() != 3 || a.dim(2) != v.dim(1))
    throw ShapeError("weighted_sum_w: incompatible shapes " + shape_str(a.shape()) + " vs " +
                     shape_str(v.shape()));
  const int64_t heads = a.dim(0), nq = a.dim(1), W = a.dim(2), H = v.dim(0), C = v.dim(2);
  if (C % heads != 0) throw ShapeError("weighted_sum_w: channels not divisible by heads");
  const int64_t dk = C / heads;
  std::vector<T> out(static_cast<std::size_t>(nq * H * C), T(0));
  const auto ad = a.data();
  const auto vd = v.data();
  for (int64_t h = 0; h < heads; ++h) {
    const int64_t off = h * dk;
    for (int64_t q = 0; q < nq; ++q)
      for (int64_t w = 0; w < W; ++w) {
        const T aw = ad[(h * nq + q) * W + w];
        if (aw == T(0)) continue;
        for (int64_t i = 0; i < H; ++i)
          for (int64_t c = 0; c < dk; ++c)
            out[static_cast<std::size_t>((q * H + i) * C + off + c)] +=
                aw * vd[(i * W + w) * C + off + c];
      }
  }
  auto* an = a.node();
  auto* vn = v.node();
  return detail::make_op<T>(
      "weighted_sum_w", {nq, H, C}, std::move(out), {a, v},
      [an, vn, heads, nq, W, H, dk, C](detail::Node<T>& n) {
        for (int64_t h = 0; h < heads; ++h) {
          const int64_t off = h * dk;
          for (int64_t q = 0; q < nq; ++q)
            for (int64_t w = 0; w < W; ++w) {
              const auto aidx = static_cast<std::size_t>((h * nq + q) * W + w);
              T da = T(0);
              for (int64_t i = 0; i < H; ++i)
                for (int64_t c = 0; c < dk; ++c) {
                  const T g = n.grad[static_cast<std::size_t>((q * H + i) * C + off + c)];
                  da += g * vn->value[static_cast<std::size_t>((i * W + w) * C + off + c)];
                  if (vn->requires_grad)
                    vn->grad[static_cast<std::size_t>((i * W + w) * C + off + c)] +=
                        an->value[aidx] * g;
                }
              if (an->requires_grad) an->grad[aidx] += da;
            }
        }
      });
}

// Contraction of column-attention weights [M,n_q,H] with the row-collapsed
// feature [n_q,H,C] over H, producing [n_q,C].
template <typename T>
Tensor<T> weighted_sum_h(const Tensor<T>& a, const Tensor<T>& z) {
  if (a.rank() != 3 || z.rank() != 3 || a.dim(1) != z.dim(0) || a.dim(2) != z.dim(1))
    throw ShapeError("weighted_sum_h: incompatible shapes " + shape_str(a.shape()) + " vs " +
                     shape_str(z.shape()));
  const int64_t heads = a.dim(0), nq = a.dim(1), H = a.dim(2), C = z.dim(2);
  if (C % heads != 0) throw ShapeError("weighted_sum_h: channels not divisible by heads");
  const int64_t dk = C / heads;
  std::vector<T> out(static_cast<std::size_t>(nq * C), T(0));
  const auto ad = a.data();
  const auto zd = z.data();
  for (int64_t h = 0; h < heads; ++h) {
    const int64_t off = h * dk;
    for (int64_t q = 0; q < nq; ++q)
      for (int64_t i = 0; i < H; ++i) {
        const T ai = ad[(h * nq + q) * H + i];
        if (ai == T(0)) continue;
        for (int64_t c = 0; c < dk; ++c)
          out[static_cast<std::size_t>(q * C + off + c)] += ai * zd[(q * H + i) * C + off + c];
      }
  }
  auto* an = a.node();
  auto* zn = z.node();
  return detail::make_op<T>(
      "weighted_sum_h", {nq, C}, std::move(out), {a, z},
      [an, zn, heads, nq, H, dk, C](detail::Node<T>& n) {
        for (int64_t h = 0; h < heads; ++h) {
          const int64_t off = h * dk;
          for (int64_t q = 0; q < nq; ++q)
            for (int64_t i = 0; i < H; ++i) {
              const auto aidx = static_cast<std::size_t>((h * nq + q) * H + i);
              T da = T(0);
              for (int64_t c = 0; c < dk; ++c) {
                const T g = n.grad[static_cast<std::size_t>(q * C + off + c)];
                da += g * zn->value[static_cast<std::size_t>((q * H + i) * C + off + c)];
                if (zn->requires_grad)
                  zn->grad[static_cast<std::size_t>((q * H + i) * C + off + c)] +=
                      an->value[aidx] * g;
              }
              if (an->requires_grad) an->grad[aidx] += da;
            }
        }
      });
}

// ---------------------------------------------------------------------------
// Linear layer parameter pair

template <typename T>
struct LinearLayer {
  Tensor<T> weight;  // [out, in]
  Tensor<T> bias;    // [out]

  static LinearLayer kaiming(int64_t in, int64_t out, std::mt19937_64& rng) {
    const T bound = static_cast<T>(1.0 / std::sqrt(static_cast<double>(in)));
    LinearLayer l;
    l.weight = Tensor<T>::uniform({out, in}, rng, -bound, bound);
    l.bias = Tensor<T>::zeros({out});
    l.weight.set_requires_grad(true);
    l.bias.set_requires_grad(true);
    return l;
  }
  static LinearLayer identity(int64_t n) {
    LinearLayer l;
    std::vector<T> w(static_cast<std::size_t>(n * n), T(0));
    for (int64_t i = 0; i < n; ++i) w[static_cast<std::size_t>(i * n + i)] = T(1);
    l.weight = Tensor<T>::from({n, n}, std::move(w));
    l.bias = Tensor<T>::zeros({n});
    return l;
  }
  static LinearLayer zero(int64_t in, int64_t out) {
    LinearLayer l;
    l.weight = Tensor<T>::zeros({out, in});
    l.bias = Tensor<T>::zeros({out});
    l.weight.set_requires_grad(true);
    l.bias.set_requires_grad(true);
    return l;
  }

  Tensor<T> forward(const Tensor<T>& x) const { return linear(x, weight, bias); }
};

// ---------------------------------------------------------------------------
// Finite-difference verification (fp64 only).

// Max over elements of |analytic - central difference| / max(|a|,|n|,1e-8).
inline double grad_check(const std::function<Tensor<double>(const Tensor<double>&)>& f,
                         const Tensor<double>& x, double h = 1e-6) {
  Tensor<double> xg = x.clone_detached();
  xg.set_requires_grad(true);
  Tensor<double> loss = f(xg);
  if (loss.size() != 1) throw std::invalid_argument("grad_check: f must be scalar-valued");
  loss.backward();
  std::vector<double> analytic(xg.grad().begin(), xg.grad().end());

  std::vector<double> base(x.data().begin(), x.data().end());
  double max_err = 0.0;
  for (std::size_t i = 0; i < base.size(); ++i) {
    std::vector<double> plus = base, minus = base;
    plus[i] += h;
    minus[i] -= h;
    const double fp = f(Tensor<double>::from(x.shape(), std::move(plus))).item();
    const double fm = f(Tensor<double>::from(x.shape(), std::move(minus))).item();
    const double numeric = (fp - fm) / (2.0 * h);
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
    max_err = std::max(max_err, std::abs(analytic[i] - numeric) / denom);
  }
  return max_err;
}

}  // namespace aqdet
