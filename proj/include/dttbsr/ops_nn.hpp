#pragma once

// Normalization, softmax, rotary embeddings, fused GRU and differentiable
// STFT/iSTFT ops.

#include <complex>
#include <memory>

#include "dttbsr/ops_linalg.hpp"
#include "dttbsr/spectral.hpp"

namespace dttbsr::nn {

namespace detail {

// Shared normalization core. x is viewed as [outer, channels, inner]; stats
// are taken over `groups` contiguous channel groups of each outer slice, and
// the affine parameters are indexed by channel.
template <class T>
Tensor<T> normalize_affine(const Tensor<T>& x, std::size_t outer, std::size_t channels,
                           std::size_t inner, std::size_t groups, const Tensor<T>& gamma,
                           const Tensor<T>& beta, T eps) {
  if (gamma.numel() != channels || beta.numel() != channels) {
    throw ShapeError("normalization affine parameters must have one entry per channel");
  }
  const std::size_t per_group = channels / groups;
  const std::size_t count = per_group * inner;
  const std::size_t n_stats = outer * groups;
  auto xhat = std::make_shared<std::vector<T>>(x.numel());
  auto inv_std = std::make_shared<std::vector<T>>(n_stats);
  std::vector<T> v(x.numel());
  const T* xs = x.data().data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t gi = 0; gi < groups; ++gi) {
      const std::size_t base = (o * channels + gi * per_group) * inner;
      double m = 0.0;
      for (std::size_t i = 0; i < count; ++i) m += xs[base + i];
      m /= static_cast<double>(count);
      double var = 0.0;
      for (std::size_t i = 0; i < count; ++i) {
        const double d = xs[base + i] - m;
        var += d * d;
      }
      var /= static_cast<double>(count);
      const T is = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps)));
      (*inv_std)[o * groups + gi] = is;
      for (std::size_t i = 0; i < count; ++i) {
        const std::size_t c = gi * per_group + i / inner;
        const T xh = (xs[base + i] - static_cast<T>(m)) * is;
        (*xhat)[base + i] = xh;
        v[base + i] = xh * gamma.data()[c] + beta.data()[c];
      }
    }
  }
  auto out = make_result<T>(x.shape(), std::move(v), {&x, &gamma, &beta});
  if (Node<T>* on = out.node(); on->requires_grad) {
    Node<T>*xn = x.node(), *gn = gamma.node(), *bn = beta.node();
    on->backward = [=] {
      T* gx = grad_of(xn);
      T* gg = grad_of(gn);
      T* gb = grad_of(bn);
      const T* gy = on->grad.data();
      const T* gamma_v = gn->value.data();
      std::vector<T> dxh(count);
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t gi = 0; gi < groups; ++gi) {
          const std::size_t base = (o * channels + gi * per_group) * inner;
          double sum_d = 0.0, sum_dx = 0.0;
          for (std::size_t i = 0; i < count; ++i) {
            const std::size_t c = gi * per_group + i / inner;
            const T xh = (*xhat)[base + i];
            if (gg) gg[c] += gy[base + i] * xh;
            if (gb) gb[c] += gy[base + i];
            dxh[i] = gy[base + i] * gamma_v[c];
            sum_d += dxh[i];
            sum_dx += dxh[i] * xh;
          }
          if (gx) {
            const T is = (*inv_std)[o * groups + gi];
            const T md = static_cast<T>(sum_d / static_cast<double>(count));
            const T mdx = static_cast<T>(sum_dx / static_cast<double>(count));
            for (std::size_t i = 0; i < count; ++i) {
              gx[base + i] += is * (dxh[i] - md - (*xhat)[base + i] * mdx);
            }
          }
        }
      }
    };
  }
  return out;
}

}  // namespace detail

// Group normalization of x [B, C, ...] with per-channel affine.
template <class T>
Tensor<T> group_norm(const Tensor<T>& x, std::size_t groups, const Tensor<T>& gamma,
                     const Tensor<T>& beta, T eps = T(1e-5)) {
  if (x.dim() < 2) throw ShapeError("group_norm expects [B, C, ...]");
  const std::size_t channels = x.shape()[1];
  if (groups == 0 || channels % groups != 0) {
    throw ConfigError("group_norm: " + std::to_string(channels) + " channels not divisible into " +
                      std::to_string(groups) + " groups");
  }
  const std::size_t inner = x.numel() / (x.shape()[0] * channels);
  return detail::normalize_affine(x, x.shape()[0], channels, inner, groups, gamma, beta, eps);
}

// Layer normalization over the last dimension.
template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps = T(1e-5)) {
  const std::size_t d = x.shape().back();
  // Each row is one group with channels == d and inner == 1.
  return detail::normalize_affine(x, x.numel() / d, d, 1, 1, gamma, beta, eps);
}

// Softmax over the last dimension.
template <class T>
Tensor<T> softmax(const Tensor<T>& x) {
  const std::size_t d = x.shape().back(), rows = x.numel() / d;
  std::vector<T> v(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xs = x.data().data() + r * d;
    T* y = v.data() + r * d;
    const T mx = *std::max_element(xs, xs + d);
    T total = T(0);
    for (std::size_t i = 0; i < d; ++i) total += (y[i] = std::exp(xs[i] - mx));
    for (std::size_t i = 0; i < d; ++i) y[i] /= total;
  }
  auto out = detail::make_result<T>(x.shape(), std::move(v), {&x});
  if (Node<T>* o = out.node(); o->requires_grad) {
    Node<T>* xn = x.node();
    o->backward = [o, xn, d, rows] {
      T* g = detail::grad_of(xn);
      if (!g) return;
      for (std::size_t r = 0; r < rows; ++r) {
        const T* y = o->value.data() + r * d;
        const T* gy = o->grad.data() + r * d;
        T dot = T(0);
        for (std::size_t i = 0; i < d; ++i) dot += gy[i] * y[i];
        for (std::size_t i = 0; i < d; ++i) g[r * d + i] += y[i] * (gy[i] - dot);
      }
    };
  }
  return out;
}

// Rotary position embedding on x [..., seq, head_dim]: the feature pair
// (2i, 2i+1) at position m is rotated by m * base^(-2i / head_dim).
template <class T>
Tensor<T> rope_rotate(const Tensor<T>& x, double base = 10000.0) {
  if (x.dim() < 2) throw ShapeError("rope_rotate expects [..., seq, head_dim]");
  const std::size_t hd = x.shape().back(), seq = x.shape()[x.dim() - 2];
  if (hd % 2 != 0) throw ArgumentError("rope_rotate: head_dim must be even");
  const std::size_t outer = x.numel() / (seq * hd), half = hd / 2;
  auto cs = std::make_shared<std::vector<T>>(seq * half * 2);
  for (std::size_t m = 0; m < seq; ++m) {
    for (std::size_t i = 0; i < half; ++i) {
      const double theta = std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(hd));
      const double angle = static_cast<double>(m) * theta;
      (*cs)[(m * half + i) * 2] = static_cast<T>(std::cos(angle));
      (*cs)[(m * half + i) * 2 + 1] = static_cast<T>(std::sin(angle));
    }
  }
  std::vector<T> v(x.numel());
  const T* xs = x.data().data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t m = 0; m < seq; ++m) {
      const std::size_t row = (o * seq + m) * hd;
      for (std::size_t i = 0; i < half; ++i) {
        const T c = (*cs)[(m * half + i) * 2], s = (*cs)[(m * half + i) * 2 + 1];
        const T a = xs[row + 2 * i], b = xs[row + 2 * i + 1];
        v[row + 2 * i] = a * c - b * s;
        v[row + 2 * i + 1] = a * s + b * c;
      }
    }
  }
  auto out = detail::make_result<T>(x.shape(), std::move(v), {&x});
  if (Node<T>* on = out.node(); on->requires_grad) {
    Node<T>* xn = x.node();
    on->backward = [on, xn, cs, outer, seq, half, hd] {
      T* g = detail::grad_of(xn);
      if (!g) return;
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t m = 0; m < seq; ++m) {
          const std::size_t row = (o * seq + m) * hd;
          for (std::size_t i = 0; i < half; ++i) {
            const T c = (*cs)[(m * half + i) * 2], s = (*cs)[(m * half + i) * 2 + 1];
            const T ga = on->grad[row + 2 * i], gb = on->grad[row + 2 * i + 1];
            g[row + 2 * i] += ga * c + gb * s;
            g[row + 2 * i + 1] += -ga * s + gb * c;
          }
        }
      }
    };
  }
  return out;
}

// Magnitude of interleaved complex values x [..., 2] -> [...]. The gradient
// at an exact zero is taken as zero.
template <class T>
Tensor<T> complex_abs(const Tensor<T>& x) {
  if (x.dim() < 1 || x.shape().back() != 2) throw ShapeError("complex_abs expects [..., 2]");
  Shape shape(x.shape().begin(), x.shape().end() - 1);
  const std::size_t n = x.numel() / 2;
  std::vector<T> v(n);
  const T* xs = x.data().data();
  for (std::size_t i = 0; i < n; ++i) {
    v[i] = std::hypot(xs[2 * i], xs[2 * i + 1]);
  }
  auto out = detail::make_result<T>(std::move(shape), std::move(v), {&x});
  if (Node<T>* o = out.node(); o->requires_grad) {
    Node<T>* xn = x.node();
    o->backward = [o, xn, n] {
      T* g = detail::grad_of(xn);
      if (!g) return;
      for (std::size_t i = 0; i < n; ++i) {
        if (o->value[i] == T(0)) continue;  // zero subgradient at the origin
        const T k = o->grad[i] / o->value[i];
        g[2 * i] += k * xn->value[2 * i];
        g[2 * i + 1] += k * xn->value[2 * i + 1];
      }
    };
  }
  return out;
}

// Single-direction GRU over x [N, S, D] with zero initial state, PyTorch gate
// layout (r, z, n): w_ih [3H, D], w_hh [3H, H], b_ih/b_hh [3H]. Returns
// [N, S, H]. With `reverse` the sequence is consumed from the end, and output
// position s still holds the state after consuming position s.
template <class T>
Tensor<T> gru(const Tensor<T>& x, const Tensor<T>& w_ih, const Tensor<T>& w_hh,
              const Tensor<T>& b_ih, const Tensor<T>& b_hh, bool reverse) {
  using namespace detail;
  if (x.dim() != 3) throw ShapeError("gru expects [N, S, D]");
  const std::size_t n = x.shape()[0], steps = x.shape()[1], d = x.shape()[2];
  const std::size_t h = w_hh.shape().size() == 2 ? w_hh.shape()[1] : 0;
  if (w_ih.shape() != Shape{3 * h, d} || w_hh.shape() != Shape{3 * h, h} ||
      b_ih.numel() != 3 * h || b_hh.numel() != 3 * h || h == 0) {
    throw ShapeError("gru: parameter shapes inconsistent with input " + to_string(x.shape()));
  }
  const std::size_t g3 = 3 * h;
  // Cached activations for backprop: r, z, n, (W_hn h + b_hn), h_prev.
  auto cache = std::make_shared<std::vector<T>>(n * steps * h * 5);
  std::vector<T> xg(n * steps * g3);
  MapMat<T>(xg.data(), n * steps, g3).noalias() =
      CMapMat<T>(x.data().data(), n * steps, d) * CMapMat<T>(w_ih.data().data(), g3, d).transpose();
  MapMat<T>(xg.data(), n * steps, g3).rowwise() += CMapVec<T>(b_ih.data().data(), g3).transpose();

  std::vector<T> v(n * steps * h);
  RowMat<T> state = RowMat<T>::Zero(n, h);
  RowMat<T> hg(n, g3);
  CMapMat<T> whh(w_hh.data().data(), g3, h);
  for (std::size_t step = 0; step < steps; ++step) {
    const std::size_t s = reverse ? steps - 1 - step : step;
    hg.noalias() = state * whh.transpose();
    hg.rowwise() += CMapVec<T>(b_hh.data().data(), g3).transpose();
    for (std::size_t i = 0; i < n; ++i) {
      const T* xr = xg.data() + (i * steps + s) * g3;
      T* c = cache->data() + (i * steps + s) * h * 5;
      for (std::size_t j = 0; j < h; ++j) {
        const T r = T(1) / (T(1) + std::exp(-(xr[j] + hg(i, j))));
        const T z = T(1) / (T(1) + std::exp(-(xr[h + j] + hg(i, h + j))));
        const T hn = hg(i, 2 * h + j);
        const T nn = std::tanh(xr[2 * h + j] + r * hn);
        const T hp = state(i, j);
        c[j] = r;
        c[h + j] = z;
        c[2 * h + j] = nn;
        c[3 * h + j] = hn;
        c[4 * h + j] = hp;
        const T hnew = (T(1) - z) * nn + z * hp;
        state(i, j) = hnew;
        v[(i * steps + s) * h + j] = hnew;
      }
    }
  }
  auto out = make_result<T>({n, steps, h}, std::move(v), {&x, &w_ih, &w_hh, &b_ih, &b_hh});
  if (Node<T>* o = out.node(); o->requires_grad) {
    Node<T>*xn = x.node(), *wihn = w_ih.node(), *whhn = w_hh.node(), *bihn = b_ih.node(),
           *bhhn = b_hh.node();
    o->backward = [=] {
      std::vector<T> dxg(n * steps * g3, T(0));
      RowMat<T> dh = RowMat<T>::Zero(n, h);
      RowMat<T> dhg(n, g3), hprev(n, h);
      CMapMat<T> whh(whhn->value.data(), g3, h);
      T* gwhh = grad_of(whhn);
      T* gbhh = grad_of(bhhn);
      for (std::size_t step = steps; step-- > 0;) {
        const std::size_t s = reverse ? steps - 1 - step : step;
        for (std::size_t i = 0; i < n; ++i) {
          const T* c = cache->data() + (i * steps + s) * h * 5;
          const T* go = o->grad.data() + (i * steps + s) * h;
          T* dx = dxg.data() + (i * steps + s) * g3;
          for (std::size_t j = 0; j < h; ++j) {
            const T r = c[j], z = c[h + j], nn = c[2 * h + j], hn = c[3 * h + j], hp = c[4 * h + j];
            const T dht = dh(i, j) + go[j];
            const T dn_pre = dht * (T(1) - z) * (T(1) - nn * nn);
            const T dz_pre = dht * (hp - nn) * z * (T(1) - z);
            const T dr_pre = dn_pre * hn * r * (T(1) - r);
            dx[j] = dr_pre;
            dx[h + j] = dz_pre;
            dx[2 * h + j] = dn_pre;
            dhg(i, j) = dr_pre;
            dhg(i, h + j) = dz_pre;
            dhg(i, 2 * h + j) = dn_pre * r;
            dh(i, j) = dht * z;
            hprev(i, j) = hp;
          }
        }
        if (gwhh) MapMat<T>(gwhh, g3, h).noalias() += dhg.transpose() * hprev;
        if (gbhh) add_column_sums(dhg.data(), dhg.rows(), g3, gbhh);
        dh.noalias() += dhg * whh;
      }
      CMapMat<T> dxm(dxg.data(), n * steps, g3);
      if (T* g = grad_of(wihn)) {
        MapMat<T>(g, g3, d).noalias() += dxm.transpose() * CMapMat<T>(xn->value.data(), n * steps, d);
      }
      if (T* g = grad_of(bihn)) add_column_sums(dxm.data(), n * steps, g3, g);
      if (T* g = grad_of(xn)) {
        MapMat<T>(g, n * steps, d).noalias() += dxm * CMapMat<T>(wihn->value.data(), g3, d);
      }
    };
  }
  return out;
}

// STFT of x [B, T] -> [B, frames, bins, 2] (real, imag).
template <class T>
Tensor<T> stft(const Tensor<T>& x, const StftConfig& cfg) {
  if (x.dim() != 2) throw ShapeError("stft expects [B, T]");
  const std::size_t batch = x.shape()[0], length = x.shape()[1];
  if (length == 0) throw EmptyInputError("stft of an empty signal");
  auto kernel = std::make_shared<StftKernel<T>>(cfg);
  const std::size_t frames = cfg.num_frames(length), bins = cfg.bins();
  const std::size_t per = frames * bins;
  std::vector<T> v(batch * per * 2);
  auto* spec = reinterpret_cast<std::complex<T>*>(v.data());
  for (std::size_t b = 0; b < batch; ++b) {
    kernel->analyze(x.data().subspan(b * length, length), std::span(spec + b * per, per));
  }
  auto out = detail::make_result<T>({batch, frames, bins, 2}, std::move(v), {&x});
  if (Node<T>* o = out.node(); o->requires_grad) {
    Node<T>* xn = x.node();
    o->backward = [o, xn, kernel, batch, length, per] {
      T* g = detail::grad_of(xn);
      if (!g) return;
      const auto* gs = reinterpret_cast<const std::complex<T>*>(o->grad.data());
      for (std::size_t b = 0; b < batch; ++b) {
        kernel->analyze_adjoint(std::span(gs + b * per, per), std::span(g + b * length, length));
      }
    };
  }
  return out;
}

// Inverse STFT of s [B, frames, bins, 2] -> [B, length].
template <class T>
Tensor<T> istft(const Tensor<T>& s, const StftConfig& cfg, std::size_t length) {
  if (s.dim() != 4 || s.shape()[3] != 2 || s.shape()[2] != cfg.bins()) {
    throw ShapeError("istft expects [B, frames, n_fft/2+1, 2]");
  }
  const std::size_t batch = s.shape()[0], frames = s.shape()[1], per = frames * cfg.bins();
  if (frames != cfg.num_frames(length)) {
    throw ConfigError("istft: frame count does not match the requested length");
  }
  auto kernel = std::make_shared<StftKernel<T>>(cfg);
  std::vector<T> v(batch * length);
  const auto* spec = reinterpret_cast<const std::complex<T>*>(s.data().data());
  for (std::size_t b = 0; b < batch; ++b) {
    kernel->synthesize(std::span(spec + b * per, per), frames, std::span(v.data() + b * length, length));
  }
  auto out = detail::make_result<T>({batch, length}, std::move(v), {&s});
  if (Node<T>* o = out.node(); o->requires_grad) {
    Node<T>* sn = s.node();
    o->backward = [o, sn, kernel, batch, length, frames, per] {
      T* g = detail::grad_of(sn);
      if (!g) return;
      auto* gs = reinterpret_cast<std::complex<T>*>(g);
      for (std::size_t b = 0; b < batch; ++b) {
        kernel->synthesize_adjoint(std::span<const T>(o->grad.data() + b * length, length), frames,
                                   std::span(gs + b * per, per));
      }
    };
  }
  return out;
}

}  // namespace dttbsr::nn
