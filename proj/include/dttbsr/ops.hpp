#pragma once

// Elementwise, reduction and layout ops on Tensor.

#include <array>
#include <cmath>
#include <numbers>
#include <random>

#include "dttbsr/tensor.hpp"

namespace dttbsr::nn {

namespace detail {

template <class T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
}

// y = f(x) with dy/dx = df(x, y).
template <class T, class F, class DF>
Tensor<T> unary(const Tensor<T>& x, F f, DF df) {
  std::vector<T> v(x.numel());
  const auto xs = x.data();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = f(xs[i]);
  auto out = make_result<T>(x.shape(), std::move(v), {&x});
  if (Node<T>* o = out.node(); o->requires_grad) {
    Node<T>* xn = x.node();
    o->backward = [o, xn, df] {
      T* gx = grad_of(xn);
      if (!gx) return;
      for (std::size_t i = 0; i < o->grad.size(); ++i) gx[i] += o->grad[i] * df(xn->value[i], o->value[i]);
    };
  }
  return out;
}

inline std::size_t normalize_axis(int axis, std::size_t rank) {
  const int r = static_cast<int>(rank);
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw ShapeError("axis out of range");
  return static_cast<std::size_t>(axis);
}

// (outer, axis, inner) factorization of a shape around one axis.
inline std::array<std::size_t, 3> split_axis(const Shape& s, std::size_t axis) {
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  return {outer, s[axis], inner};
}

}  // namespace detail

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<T> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] + b.data()[i];
  auto out = detail::make_result<T>(a.shape(), std::move(v), {&a, &b});
  if (Node<T>* o = out.node(); o->requires_grad) {
    Node<T>*an = a.node(), *bn = b.node();
    o->backward = [o, an, bn] {
      if (T* g = detail::grad_of(an)) for (std::size_t i = 0; i < o->grad.size(); ++i) g[i] += o->grad[i];
      if (T* g = detail::grad_of(bn)) for (std::size_t i = 0; i < o->grad.size(); ++i) g[i] += o->grad[i];
    };
  }
  return out;
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<T> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] - b.data()[i];
  auto out = detail::make_result<T>(a.shape(), std::move(v), {&a, &b});
  if (Node<T>* o = out.node(); o->requires_grad) {
    Node<T>*an = a.node(), *bn = b.node();
    o->backward = [o, an, bn] {
      if (T* g = detail::grad_of(an)) for (std::size_t i = 0; i < o->grad.size(); ++i) g[i] += o->grad[i];
      if (T* g = detail::grad_of(bn)) for (std::size_t i = 0; i < o->grad.size(); ++i) g[i] -= o->grad[i];
    };
  }
  return out;
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<T> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] * b.data()[i];
  auto out = detail::make_result<T>(a.shape(), std::move(v), {&a, &b});
  if (Node<T>* o = out.node(); o->requires_grad) {
    Node<T>*an = a.node(), *bn = b.node();
    o->backward = [o, an, bn] {
      if (T* g = detail::grad_of(an)) for (std::size_t i = 0; i < o->grad.size(); ++i) g[i] += o->grad[i] * bn->value[i];
      if (T* g = detail::grad_of(bn)) for (std::size_t i = 0; i < o->grad.size(); ++i) g[i] += o->grad[i] * an->value[i];
    };
  }
  return out;
}

template <class T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "div");
  std::vector<T> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] / b.data()[i];
  auto out = detail::make_result<T>(a.shape(), std::move(v), {&a, &b});
  if (Node<T>* o = out.node(); o->requires_grad) {
    Node<T>*an = a.node(), *bn = b.node();
    o->backward = [o, an, bn] {
      if (T* g = detail::grad_of(an)) for (std::size_t i = 0; i < o->grad.size(); ++i) g[i] += o->grad[i] / bn->value[i];
      if (T* g = detail::grad_of(bn)) {
        for (std::size_t i = 0; i < o->grad.size(); ++i) g[i] -= o->grad[i] * o->value[i] / bn->value[i];
      }
    };
  }
  return out;
}

template <class T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  return detail::unary(x, [factor](T v) { return v * factor; }, [factor](T, T) { return factor; });
}

template <class T>
Tensor<T> add_scalar(const Tensor<T>& x, T c) {
  return detail::unary(x, [c](T v) { return v + c; }, [](T, T) { return T(1); });
}

template <class T>
Tensor<T> abs(const Tensor<T>& x) {
  return detail::unary(x, [](T v) { return std::abs(v); },
                       [](T v, T) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
}

template <class T>
Tensor<T> square(const Tensor<T>& x) {
  return detail::unary(x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
  return detail::unary(x, [](T v) { return v > T(0) ? v : T(0); },
                       [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <class T>
Tensor<T> leaky_relu(const Tensor<T>& x, T slope) {
  return detail::unary(x, [slope](T v) { return v > T(0) ? v : slope * v; },
                       [slope](T v, T) { return v > T(0) ? T(1) : slope; });
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return detail::unary(x, [](T v) { return T(1) / (T(1) + std::exp(-v)); },
                       [](T, T y) { return y * (T(1) - y); });
}

template <class T>
Tensor<T> tanh(const Tensor<T>& x) {
  return detail::unary(x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <class T>
Tensor<T> log(const Tensor<T>& x) {
  return detail::unary(x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

// Exact GELU, x * Phi(x).
template <class T>
Tensor<T> gelu(const Tensor<T>& x) {
  constexpr T kInvSqrt2 = T(0.70710678118654752440);
  const T inv_sqrt_2pi = T(1) / std::sqrt(T(2) * std::numbers::pi_v<T>);
  return detail::unary(
      x, [](T v) { return v * T(0.5) * (T(1) + std::erf(v * kInvSqrt2)); },
      [inv_sqrt_2pi](T v, T) {
        const T cdf = T(0.5) * (T(1) + std::erf(v * kInvSqrt2));
        return cdf + v * inv_sqrt_2pi * std::exp(T(-0.5) * v * v);
      });
}

template <class T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <class T>
Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <class T>
Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }
template <class T>
Tensor<T> operator*(T s, const Tensor<T>& x) { return scale(x, s); }

template <class T>
Tensor<T> sum(const Tensor<T>& x) {
  T acc = T(0);
  for (T v : x.data()) acc += v;
  auto out = detail::make_result<T>({}, {acc}, {&x});
  if (Node<T>* o = out.node(); o->requires_grad) {
    Node<T>* xn = x.node();
    o->backward = [o, xn] {
      if (T* g = detail::grad_of(xn)) for (std::size_t i = 0; i < xn->value.size(); ++i) g[i] += o->grad[0];
    };
  }
  return out;
}

template <class T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

// Sum of all elements weighted by a constant tensor of the same shape.
template <class T>
Tensor<T> weighted_sum(const Tensor<T>& x, const std::vector<T>& weights) {
  if (weights.size() != x.numel()) throw ShapeError("weighted_sum: weight count mismatch");
  T acc = T(0);
  for (std::size_t i = 0; i < weights.size(); ++i) acc += x.data()[i] * weights[i];
  auto out = detail::make_result<T>({}, {acc}, {&x});
  if (Node<T>* o = out.node(); o->requires_grad) {
    Node<T>* xn = x.node();
    o->backward = [o, xn, weights] {
      if (T* g = detail::grad_of(xn)) for (std::size_t i = 0; i < weights.size(); ++i) g[i] += o->grad[0] * weights[i];
    };
  }
  return out;
}

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (numel(shape) != x.numel()) {
    throw ShapeError("reshape " + to_string(x.shape()) + " -> " + to_string(shape));
  }
  auto out = detail::make_result<T>(std::move(shape), x.values(), {&x});
  if (Node<T>* o = out.node(); o->requires_grad) {
    Node<T>* xn = x.node();
    o->backward = [o, xn] {
      if (T* g = detail::grad_of(xn)) for (std::size_t i = 0; i < o->grad.size(); ++i) g[i] += o->grad[i];
    };
  }
  return out;
}

// out.shape[i] = x.shape[perm[i]].
template <class T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& perm) {
  const std::size_t rank = x.dim();
  if (perm.size() != rank) throw ShapeError("permute: rank mismatch");
  std::vector<std::size_t> in_strides(rank, 1);
  for (std::size_t i = rank; i-- > 1;) in_strides[i - 1] = in_strides[i] * x.shape()[i];
  Shape out_shape(rank);
  std::vector<std::size_t> src_stride(rank);
  std::vector<bool> seen(rank, false);
  for (std::size_t i = 0; i < rank; ++i) {
    if (perm[i] >= rank || seen[perm[i]]) throw ShapeError("permute: invalid permutation");
    seen[perm[i]] = true;
    out_shape[i] = x.shape()[perm[i]];
    src_stride[i] = in_strides[perm[i]];
  }
  const std::size_t n = x.numel();
  // Precomputed gather map, reused by the backward pass.
  auto index = std::make_shared<std::vector<std::size_t>>(n);
  std::vector<std::size_t> counter(rank, 0);
  std::size_t src = 0;
  for (std::size_t i = 0; i < n; ++i) {
    (*index)[i] = src;
    for (std::size_t d = rank; d-- > 0;) {
      if (++counter[d] < out_shape[d]) {
        src += src_stride[d];
        break;
      }
      src -= src_stride[d] * (out_shape[d] - 1);
      counter[d] = 0;
    }
  }
  std::vector<T> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = x.data()[(*index)[i]];
  auto out = detail::make_result<T>(std::move(out_shape), std::move(v), {&x});
  if (Node<T>* o = out.node(); o->requires_grad) {
    Node<T>* xn = x.node();
    o->backward = [o, xn, index] {
      if (T* g = detail::grad_of(xn)) for (std::size_t i = 0; i < o->grad.size(); ++i) g[(*index)[i]] += o->grad[i];
    };
  }
  return out;
}

// Takes `length` entries starting at `start` along `axis`.
template <class T>
Tensor<T> slice(const Tensor<T>& x, int axis_in, std::size_t start, std::size_t length) {
  const std::size_t axis = detail::normalize_axis(axis_in, x.dim());
  const auto dims = detail::split_axis(x.shape(), axis);
  const std::size_t outer = dims[0], extent = dims[1], inner = dims[2];
  if (start + length > extent) throw ShapeError("slice out of range");
  Shape shape = x.shape();
  shape[axis] = length;
  std::vector<T> v(outer * length * inner);
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(x.data().begin() + (o * extent + start) * inner, length * inner,
                v.begin() + o * length * inner);
  }
  auto out = detail::make_result<T>(std::move(shape), std::move(v), {&x});
  if (Node<T>* on = out.node(); on->requires_grad) {
    Node<T>* xn = x.node();
    on->backward = [on, xn, outer, extent, inner, start, length] {
      T* g = detail::grad_of(xn);
      if (!g) return;
      for (std::size_t o = 0; o < outer; ++o) {
        const T* src = on->grad.data() + o * length * inner;
        T* dst = g + (o * extent + start) * inner;
        for (std::size_t i = 0; i < length * inner; ++i) dst[i] += src[i];
      }
    };
  }
  return out;
}

// Zero padding along `axis`.
template <class T>
Tensor<T> pad(const Tensor<T>& x, int axis_in, std::size_t before, std::size_t after) {
  const std::size_t axis = detail::normalize_axis(axis_in, x.dim());
  const auto dims = detail::split_axis(x.shape(), axis);
  const std::size_t outer = dims[0], extent = dims[1], inner = dims[2];
  const std::size_t new_extent = extent + before + after;
  Shape shape = x.shape();
  shape[axis] = new_extent;
  std::vector<T> v(outer * new_extent * inner, T(0));
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(x.data().begin() + o * extent * inner, extent * inner,
                v.begin() + (o * new_extent + before) * inner);
  }
  auto out = detail::make_result<T>(std::move(shape), std::move(v), {&x});
  if (Node<T>* on = out.node(); on->requires_grad) {
    Node<T>* xn = x.node();
    on->backward = [on, xn, outer, extent, inner, before, new_extent] {
      T* g = detail::grad_of(xn);
      if (!g) return;
      for (std::size_t o = 0; o < outer; ++o) {
        const T* src = on->grad.data() + (o * new_extent + before) * inner;
        T* dst = g + o * extent * inner;
        for (std::size_t i = 0; i < extent * inner; ++i) dst[i] += src[i];
      }
    };
  }
  return out;
}

template <class T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis_in) {
  if (parts.empty()) throw ShapeError("concat of nothing");
  const std::size_t axis = detail::normalize_axis(axis_in, parts[0].dim());
  Shape shape = parts[0].shape();
  std::size_t total = 0;
  std::vector<std::size_t> extents;
  for (const auto& p : parts) {
    Shape s = p.shape();
    if (s.size() != shape.size()) throw ShapeError("concat: rank mismatch");
    s[axis] = shape[axis];
    if (s != shape) throw ShapeError("concat: shape mismatch off the concat axis");
    extents.push_back(p.shape()[axis]);
    total += p.shape()[axis];
  }
  const auto dims = detail::split_axis(shape, axis);
  const std::size_t outer = dims[0], inner = dims[2];
  shape[axis] = total;
  std::vector<T> v(outer * total * inner);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(parts[k].data().begin() + o * extents[k] * inner, extents[k] * inner,
                  v.begin() + (o * total + offset) * inner);
    }
    offset += extents[k];
  }
  auto out = detail::make_result<T>(std::move(shape), std::move(v), parts);
  if (Node<T>* on = out.node(); on->requires_grad) {
    std::vector<Node<T>*> nodes;
    for (const auto& p : parts) nodes.push_back(p.node());
    on->backward = [on, nodes, extents, outer, inner, total] {
      std::size_t off = 0;
      for (std::size_t k = 0; k < nodes.size(); ++k) {
        if (T* g = detail::grad_of(nodes[k])) {
          for (std::size_t o = 0; o < outer; ++o) {
            const T* src = on->grad.data() + (o * total + off) * inner;
            T* dst = g + o * extents[k] * inner;
            for (std::size_t i = 0; i < extents[k] * inner; ++i) dst[i] += src[i];
          }
        }
        off += extents[k];
      }
    };
  }
  return out;
}

// Uniform double in [0, 1) from a 64-bit engine; identical on every platform.
inline double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Inverted dropout: identity when not training or p == 0.
template <class T>
Tensor<T> dropout(const Tensor<T>& x, double p, bool train, std::mt19937_64* rng) {
  if (!train || p <= 0.0) return x;
  if (p >= 1.0) throw ArgumentError("dropout probability must be < 1");
  if (!rng) throw ArgumentError("dropout in training mode needs an rng");
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  auto mask = std::make_shared<std::vector<T>>(x.numel());
  std::vector<T> v(x.numel());
  for (std::size_t i = 0; i < v.size(); ++i) {
    (*mask)[i] = uniform01(*rng) < p ? T(0) : keep_scale;
    v[i] = x.data()[i] * (*mask)[i];
  }
  auto out = detail::make_result<T>(x.shape(), std::move(v), {&x});
  if (Node<T>* o = out.node(); o->requires_grad) {
    Node<T>* xn = x.node();
    o->backward = [o, xn, mask] {
      if (T* g = detail::grad_of(xn)) for (std::size_t i = 0; i < o->grad.size(); ++i) g[i] += o->grad[i] * (*mask)[i];
    };
  }
  return out;
}

}  // namespace dttbsr::nn
