#pragma once

// Iterative radix-2 complex FFT. Sizes must be powers of two.

#include <bit>
#include <cmath>
#include <complex>
#include <numbers>
#include <span>
#include <vector>

#include "dttbsr/errors.hpp"

namespace dttbsr {

template <class T>
class Fft {
 public:
  explicit Fft(std::size_t n) : n_(n) {
    if (n == 0 || !std::has_single_bit(n)) {
      throw ArgumentError("FFT size must be a power of two, got " + std::to_string(n));
    }
    twiddles_.resize(n / 2);
    for (std::size_t k = 0; k < n / 2; ++k) {
      const double angle = -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
      twiddles_[k] = {static_cast<T>(std::cos(angle)), static_cast<T>(std::sin(angle))};
    }
    bitrev_.resize(n);
    const int bits = std::countr_zero(n);
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t r = 0;
      for (int b = 0; b < bits; ++b) r |= ((i >> b) & 1u) << (bits - 1 - b);
      bitrev_[i] = r;
    }
  }

  std::size_t size() const { return n_; }

  // In place, X[k] = sum_n x[n] exp(-2 pi i k n / N). Unnormalized.
  void forward(std::span<std::complex<T>> data) const { transform(data, false); }

  // In place, x[n] = sum_k X[k] exp(+2 pi i k n / N). Unnormalized (no 1/N).
  void inverse(std::span<std::complex<T>> data) const { transform(data, true); }

 private:
  void transform(std::span<std::complex<T>> a, bool inverse) const {
    if (a.size() != n_) throw ShapeError("FFT buffer size mismatch");
    for (std::size_t i = 0; i < n_; ++i) {
      if (i < bitrev_[i]) std::swap(a[i], a[bitrev_[i]]);
    }
    for (std::size_t len = 2; len <= n_; len <<= 1) {
      const std::size_t half = len / 2;
      const std::size_t stride = n_ / len;
      for (std::size_t i = 0; i < n_; i += len) {
        for (std::size_t j = 0; j < half; ++j) {
          std::complex<T> w = twiddles_[j * stride];
          if (inverse) w = std::conj(w);
          const std::complex<T> u = a[i + j];
          const std::complex<T> v = a[i + j + half] * w;
          a[i + j] = u + v;
          a[i + j + half] = u - v;
        }
      }
    }
  }

  std::size_t n_;
  std::vector<std::complex<T>> twiddles_;
  std::vector<std::size_t> bitrev_;
};

inline std::size_t next_pow2(std::size_t n) { return n <= 1 ? 1 : std::bit_ceil(n); }

// Linear convolution of two real sequences via zero-padded FFT.
template <class T>
std::vector<T> fft_convolve(std::span<const T> a, std::span<const T> b) {
  if (a.empty() || b.empty()) return {};
  const std::size_t out_len = a.size() + b.size() - 1;
  const std::size_t n = next_pow2(out_len);
  Fft<T> fft(n);
  std::vector<std::complex<T>> fa(n), fb(n);
  for (std::size_t i = 0; i < a.size(); ++i) fa[i] = a[i];
  for (std::size_t i = 0; i < b.size(); ++i) fb[i] = b[i];
  fft.forward(fa);
  fft.forward(fb);
  for (std::size_t i = 0; i < n; ++i) fa[i] *= fb[i];
  fft.inverse(fa);
  std::vector<T> out(out_len);
  const T scale = T(1) / static_cast<T>(n);
  for (std::size_t i = 0; i < out_len; ++i) out[i] = fa[i].real() * scale;
  return out;
}

}  // namespace dttbsr
