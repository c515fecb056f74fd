#pragma once

// Matrix products and 2-D convolutions. Dense GEMMs go through Eigen.

#include <algorithm>
#include <optional>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "dttbsr/ops.hpp"

namespace dttbsr::nn {

namespace detail {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<RowMat<T>>;
template <class T>
using CMapMat = Eigen::Map<const RowMat<T>>;
template <class T>
using MapVec = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>;
template <class T>
using CMapVec = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>;

// Bias-gradient reductions with a fixed summation order. Eigen's vectorized
// row and column sums pick their order from the runtime buffer alignment,
// which breaks bit-exact reproducibility between runs.
template <class T>
void add_column_sums(const T* m, std::size_t rows, std::size_t cols, T* out) {
  std::vector<T> acc(m, m + std::min<std::size_t>(rows, 1) * cols);
  acc.resize(cols, T(0));
  for (std::size_t r = 1; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) acc[c] += m[r * cols + c];
  for (std::size_t c = 0; c < cols; ++c) out[c] += acc[c];
}

template <class T>
void add_row_sums(const T* m, std::size_t rows, std::size_t cols, T* out) {
  for (std::size_t r = 0; r < rows; ++r) {
    T acc = T(0);
    for (std::size_t c = 0; c < cols; ++c) acc += m[r * cols + c];
    out[r] += acc;
  }
}

}  // namespace detail

// Affine map over the last dimension: y = x W^T + b, W is [out, in].
template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>* bias = nullptr) {
  using namespace detail;
  if (weight.dim() != 2) throw ShapeError("linear: weight must be 2-D");
  const std::size_t din = weight.shape()[1], dout = weight.shape()[0];
  if (x.dim() < 1 || x.shape().back() != din) {
    throw ShapeError("linear: input " + to_string(x.shape()) + " vs weight " + to_string(weight.shape()));
  }
  if (bias && bias->numel() != dout) throw ShapeError("linear: bias length mismatch");
  const std::size_t rows = x.numel() / din;
  Shape shape = x.shape();
  shape.back() = dout;
  std::vector<T> v(rows * dout);
  {
    MapMat<T> y(v.data(), rows, dout);
    y.noalias() = CMapMat<T>(x.data().data(), rows, din) *
                  CMapMat<T>(weight.data().data(), dout, din).transpose();
    if (bias) y.rowwise() += CMapVec<T>(bias->data().data(), dout).transpose();
  }
  auto out = make_result<T>(std::move(shape), std::move(v), {&x, &weight, bias});
  if (Node<T>* o = out.node(); o->requires_grad) {
    Node<T>*xn = x.node(), *wn = weight.node(), *bn = bias ? bias->node() : nullptr;
    o->backward = [o, xn, wn, bn, rows, din, dout] {
      CMapMat<T> gy(o->grad.data(), rows, dout);
      if (T* gx = grad_of(xn)) {
        MapMat<T>(gx, rows, din).noalias() += gy * CMapMat<T>(wn->value.data(), dout, din);
      }
      if (T* gw = grad_of(wn)) {
        MapMat<T>(gw, dout, din).noalias() += gy.transpose() * CMapMat<T>(xn->value.data(), rows, din);
      }
      if (T* gb = grad_of(bn)) add_column_sums(o->grad.data(), rows, dout, gb);
    };
  }
  return out;
}

template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  return linear(x, weight, &bias);
}

// Batched product of [B, M, K] and [B, K, N] (or [B, N, K] with transpose_b).
template <class T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b, bool transpose_b = false) {
  using namespace detail;
  if (a.dim() != 3 || b.dim() != 3 || a.shape()[0] != b.shape()[0]) {
    throw ShapeError("bmm: expects [B,M,K] x [B,K,N]");
  }
  const std::size_t batch = a.shape()[0], m = a.shape()[1], k = a.shape()[2];
  const std::size_t kb = transpose_b ? b.shape()[2] : b.shape()[1];
  const std::size_t n = transpose_b ? b.shape()[1] : b.shape()[2];
  if (kb != k) throw ShapeError("bmm: inner dimensions differ");
  std::vector<T> v(batch * m * n);
  for (std::size_t i = 0; i < batch; ++i) {
    CMapMat<T> am(a.data().data() + i * m * k, m, k);
    MapMat<T> y(v.data() + i * m * n, m, n);
    if (transpose_b) {
      y.noalias() = am * CMapMat<T>(b.data().data() + i * n * k, n, k).transpose();
    } else {
      y.noalias() = am * CMapMat<T>(b.data().data() + i * k * n, k, n);
    }
  }
  auto out = make_result<T>({batch, m, n}, std::move(v), {&a, &b});
  if (Node<T>* o = out.node(); o->requires_grad) {
    Node<T>*an = a.node(), *bn = b.node();
    o->backward = [o, an, bn, batch, m, k, n, transpose_b] {
      T* ga = grad_of(an);
      T* gb = grad_of(bn);
      for (std::size_t i = 0; i < batch; ++i) {
        CMapMat<T> gy(o->grad.data() + i * m * n, m, n);
        CMapMat<T> am(an->value.data() + i * m * k, m, k);
        if (transpose_b) {
          CMapMat<T> bm(bn->value.data() + i * n * k, n, k);
          if (ga) MapMat<T>(ga + i * m * k, m, k).noalias() += gy * bm;
          if (gb) MapMat<T>(gb + i * n * k, n, k).noalias() += gy.transpose() * am;
        } else {
          CMapMat<T> bm(bn->value.data() + i * k * n, k, n);
          if (ga) MapMat<T>(ga + i * m * k, m, k).noalias() += gy * bm.transpose();
          if (gb) MapMat<T>(gb + i * k * n, k, n).noalias() += am.transpose() * gy;
        }
      }
    };
  }
  return out;
}

struct Conv2dGeometry {
  std::size_t batch, in_ch, height, width;
  std::size_t out_ch, kh, kw;
  std::size_t stride_h, stride_w, pad_h, pad_w;
  std::size_t out_h, out_w;

  bool pointwise() const {
    return kh == 1 && kw == 1 && stride_h == 1 && stride_w == 1 && pad_h == 0 && pad_w == 0;
  }
  std::size_t patch() const { return in_ch * kh * kw; }
};

namespace detail {

// Output columns [lo, hi) whose input column ow * stride + k - pad lies in [0, width).
inline std::pair<std::size_t, std::size_t> valid_columns(std::size_t k, std::size_t pad, std::size_t stride,
                                                         std::size_t width, std::size_t out_w) {
  const std::size_t lo = pad > k ? (pad - k + stride - 1) / stride : 0;
  const std::size_t hi = width + pad > k ? std::min(out_w, (width + pad - k + stride - 1) / stride) : 0;
  return {std::min(lo, hi), hi};
}

template <class T>
void im2col(const T* x, const Conv2dGeometry& g, T* cols) {
  const std::size_t plane = g.out_h * g.out_w;
  for (std::size_t c = 0; c < g.in_ch; ++c) {
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        T* row = cols + ((c * g.kh + ki) * g.kw + kj) * plane;
        const auto [lo, hi] = valid_columns(kj, g.pad_w, g.stride_w, g.width, g.out_w);
        for (std::size_t oh = 0; oh < g.out_h; ++oh) {
          const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * g.stride_h + ki) -
                                    static_cast<std::ptrdiff_t>(g.pad_h);
          T* dst = row + oh * g.out_w;
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.height)) {
            std::fill_n(dst, g.out_w, T(0));
            continue;
          }
          const T* src = x + static_cast<std::ptrdiff_t>((c * g.height + static_cast<std::size_t>(ih)) * g.width + kj) -
                         static_cast<std::ptrdiff_t>(g.pad_w);
          std::fill(dst, dst + lo, T(0));
          if (g.stride_w == 1) {
            std::copy(src + lo, src + hi, dst + lo);
          } else {
            for (std::size_t ow = lo; ow < hi; ++ow) dst[ow] = src[ow * g.stride_w];
          }
          std::fill(dst + hi, dst + g.out_w, T(0));
        }
      }
    }
  }
}

template <class T>
void col2im_add(const T* cols, const Conv2dGeometry& g, T* x) {
  const std::size_t plane = g.out_h * g.out_w;
  for (std::size_t c = 0; c < g.in_ch; ++c) {
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        const T* row = cols + ((c * g.kh + ki) * g.kw + kj) * plane;
        const auto [lo, hi] = valid_columns(kj, g.pad_w, g.stride_w, g.width, g.out_w);
        for (std::size_t oh = 0; oh < g.out_h; ++oh) {
          const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * g.stride_h + ki) -
                                    static_cast<std::ptrdiff_t>(g.pad_h);
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.height)) continue;
          T* dst = x + static_cast<std::ptrdiff_t>((c * g.height + static_cast<std::size_t>(ih)) * g.width + kj) -
                   static_cast<std::ptrdiff_t>(g.pad_w);
          const T* src = row + oh * g.out_w;
          if (g.stride_w == 1) {
            for (std::size_t ow = lo; ow < hi; ++ow) dst[ow] += src[ow];
          } else {
            for (std::size_t ow = lo; ow < hi; ++ow) dst[ow * g.stride_w] += src[ow];
          }
        }
      }
    }
  }
}

}  // namespace detail

// Cross-correlation of x [B, Cin, H, W] with weight [Cout, Cin, kh, kw].
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>* bias,
                 std::pair<std::size_t, std::size_t> stride = {1, 1},
                 std::pair<std::size_t, std::size_t> padding = {0, 0}) {
  using namespace detail;
  if (x.dim() != 4 || weight.dim() != 4) throw ShapeError("conv2d expects 4-D input and weight");
  Conv2dGeometry g{};
  g.batch = x.shape()[0];
  g.in_ch = x.shape()[1];
  g.height = x.shape()[2];
  g.width = x.shape()[3];
  g.out_ch = weight.shape()[0];
  g.kh = weight.shape()[2];
  g.kw = weight.shape()[3];
  g.stride_h = stride.first;
  g.stride_w = stride.second;
  g.pad_h = padding.first;
  g.pad_w = padding.second;
  if (weight.shape()[1] != g.in_ch) {
    throw ShapeError("conv2d: input has " + std::to_string(g.in_ch) + " channels, weight expects " +
                     std::to_string(weight.shape()[1]));
  }
  if (g.stride_h == 0 || g.stride_w == 0) throw ArgumentError("conv2d: zero stride");
  if (g.height + 2 * g.pad_h < g.kh || g.width + 2 * g.pad_w < g.kw) {
    throw ShapeError("conv2d: kernel larger than padded input");
  }
  if (bias && bias->numel() != g.out_ch) throw ShapeError("conv2d: bias length mismatch");
  g.out_h = (g.height + 2 * g.pad_h - g.kh) / g.stride_h + 1;
  g.out_w = (g.width + 2 * g.pad_w - g.kw) / g.stride_w + 1;

  const std::size_t plane = g.out_h * g.out_w, in_plane = g.in_ch * g.height * g.width;
  std::vector<T> v(g.batch * g.out_ch * plane);
  std::vector<T> cols(g.pointwise() ? 0 : g.patch() * plane);
  CMapMat<T> w(weight.data().data(), g.out_ch, g.patch());
  for (std::size_t b = 0; b < g.batch; ++b) {
    const T* xb = x.data().data() + b * in_plane;
    const T* colp = xb;
    if (!g.pointwise()) {
      im2col(xb, g, cols.data());
      colp = cols.data();
    }
    MapMat<T> y(v.data() + b * g.out_ch * plane, g.out_ch, plane);
    y.noalias() = w * CMapMat<T>(colp, g.patch(), plane);
    if (bias) y.colwise() += CMapVec<T>(bias->data().data(), g.out_ch);
  }
  auto out = make_result<T>({g.batch, g.out_ch, g.out_h, g.out_w}, std::move(v), {&x, &weight, bias});
  if (Node<T>* o = out.node(); o->requires_grad) {
    Node<T>*xn = x.node(), *wn = weight.node(), *bn = bias ? bias->node() : nullptr;
    o->backward = [o, xn, wn, bn, g, plane, in_plane] {
      T* gx = grad_of(xn);
      T* gw = grad_of(wn);
      T* gb = grad_of(bn);
      CMapMat<T> w(wn->value.data(), g.out_ch, g.patch());
      std::vector<T> cols(g.pointwise() ? 0 : g.patch() * plane);
      for (std::size_t b = 0; b < g.batch; ++b) {
        CMapMat<T> gy(o->grad.data() + b * g.out_ch * plane, g.out_ch, plane);
        const T* xb = xn->value.data() + b * in_plane;
        if (gw) {
          const T* colp = xb;
          if (!g.pointwise()) {
            im2col(xb, g, cols.data());
            colp = cols.data();
          }
          MapMat<T>(gw, g.out_ch, g.patch()).noalias() +=
              gy * CMapMat<T>(colp, g.patch(), plane).transpose();
        }
        if (gb) add_row_sums(gy.data(), g.out_ch, plane, gb);
        if (gx) {
          if (g.pointwise()) {
            MapMat<T>(gx + b * in_plane, g.patch(), plane).noalias() += w.transpose() * gy;
          } else {
            MapMat<T>(cols.data(), g.patch(), plane).noalias() = w.transpose() * gy;
            col2im_add(cols.data(), g, gx + b * in_plane);
          }
        }
      }
    };
  }
  return out;
}

// Transposed convolution whose kernel equals its stride (non-overlapping
// patches), weight [Cin, Cout, kh, kw]. Output extents are (H*kh, W*kw).
template <class T>
Tensor<T> conv_transpose2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>* bias) {
  using namespace detail;
  if (x.dim() != 4 || weight.dim() != 4) throw ShapeError("conv_transpose2d expects 4-D tensors");
  const std::size_t batch = x.shape()[0], cin = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
  const std::size_t cout = weight.shape()[1], kh = weight.shape()[2], kw = weight.shape()[3];
  if (weight.shape()[0] != cin) throw ShapeError("conv_transpose2d: channel mismatch");
  if (bias && bias->numel() != cout) throw ShapeError("conv_transpose2d: bias length mismatch");
  const std::size_t plane = h * w, oh = h * kh, ow = w * kw, taps = cout * kh * kw;
  std::vector<T> v(batch * cout * oh * ow);
  std::vector<T> cols(taps * plane);
  CMapMat<T> wm(weight.data().data(), cin, taps);
  auto scatter = [=](const T* c, T* y) {
    for (std::size_t co = 0; co < cout; ++co)
      for (std::size_t i = 0; i < kh; ++i)
        for (std::size_t j = 0; j < kw; ++j) {
          const T* row = c + ((co * kh + i) * kw + j) * plane;
          for (std::size_t r = 0; r < h; ++r)
            for (std::size_t q = 0; q < w; ++q) y[(co * oh + r * kh + i) * ow + q * kw + j] = row[r * w + q];
        }
  };
  for (std::size_t b = 0; b < batch; ++b) {
    MapMat<T>(cols.data(), taps, plane).noalias() =
        wm.transpose() * CMapMat<T>(x.data().data() + b * cin * plane, cin, plane);
    T* y = v.data() + b * cout * oh * ow;
    scatter(cols.data(), y);
    if (bias) {
      for (std::size_t co = 0; co < cout; ++co) {
        const T bv = bias->data()[co];
        for (std::size_t i = 0; i < oh * ow; ++i) y[co * oh * ow + i] += bv;
      }
    }
  }
  auto out = make_result<T>({batch, cout, oh, ow}, std::move(v), {&x, &weight, bias});
  if (Node<T>* o = out.node(); o->requires_grad) {
    Node<T>*xn = x.node(), *wn = weight.node(), *bn = bias ? bias->node() : nullptr;
    o->backward = [=] {
      T* gx = grad_of(xn);
      T* gw = grad_of(wn);
      T* gb = grad_of(bn);
      std::vector<T> gcols(taps * plane);
      CMapMat<T> wm(wn->value.data(), cin, taps);
      for (std::size_t b = 0; b < batch; ++b) {
        const T* gy = o->grad.data() + b * cout * oh * ow;
        for (std::size_t co = 0; co < cout; ++co)
          for (std::size_t i = 0; i < kh; ++i)
            for (std::size_t j = 0; j < kw; ++j) {
              T* row = gcols.data() + ((co * kh + i) * kw + j) * plane;
              for (std::size_t r = 0; r < h; ++r)
                for (std::size_t q = 0; q < w; ++q) row[r * w + q] = gy[(co * oh + r * kh + i) * ow + q * kw + j];
            }
        CMapMat<T> gc(gcols.data(), taps, plane);
        CMapMat<T> xb(xn->value.data() + b * cin * plane, cin, plane);
        if (gw) MapMat<T>(gw, cin, taps).noalias() += xb * gc.transpose();
        if (gx) MapMat<T>(gx + b * cin * plane, cin, plane).noalias() += wm * gc;
        if (gb) {
          for (std::size_t co = 0; co < cout; ++co) {
            T acc = T(0);
            for (std::size_t i = 0; i < oh * ow; ++i) acc += gy[co * oh * ow + i];
            gb[co] += acc;
          }
        }
      }
    };
  }
  return out;
}

}  // namespace dttbsr::nn
