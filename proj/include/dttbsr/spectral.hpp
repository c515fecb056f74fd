#pragma once

// Short-time Fourier analysis/synthesis and mel filterbanks.
//
// Conventions: periodic Hann window, unnormalized forward DFT, one-sided
// spectrum (n_fft/2 + 1 bins), optional center reflect-padding of n_fft/2
// samples on both ends. Synthesis is weighted overlap-add normalized by the
// summed squared window, which is the least-squares inverse of analysis.

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <span>
#include <vector>

#include "dttbsr/audio_io.hpp"
#include "dttbsr/errors.hpp"
#include "dttbsr/fft.hpp"

namespace dttbsr {

inline std::vector<double> hann_window(std::size_t n) {
  if (n < 2) throw ArgumentError("hann_window needs n >= 2");
  std::vector<double> w(n);
  for (std::size_t k = 0; k < n; ++k) {
    w[k] = 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * static_cast<double>(k) /
                                 static_cast<double>(n)));
  }
  return w;
}

struct StftConfig {
  std::size_t n_fft = 2048;
  std::size_t hop_length = 512;
  std::vector<double> window = hann_window(2048);
  bool center = true;

  static StftConfig hann(std::size_t n_fft, std::size_t hop, bool center = true) {
    StftConfig cfg;
    cfg.n_fft = n_fft;
    cfg.hop_length = hop;
    cfg.window = hann_window(n_fft);
    cfg.center = center;
    cfg.validate();
    return cfg;
  }

  std::size_t bins() const { return n_fft / 2 + 1; }

  void validate() const {
    if (hop_length == 0 || hop_length > n_fft) {
      throw ArgumentError("STFT hop length must satisfy 0 < hop <= n_fft");
    }
    if (window.size() != n_fft) throw ArgumentError("STFT window length must equal n_fft");
    for (double v : window) {
      if (!(v >= 0.0 && v <= 1.0)) throw ArgumentError("STFT window values must lie in [0, 1]");
    }
  }

  // Number of frames produced for a signal of `length` samples.
  std::size_t num_frames(std::size_t length) const {
    if (center) return 1 + length / hop_length;
    if (length < n_fft) throw LengthError("signal shorter than n_fft without center padding");
    return 1 + (length - n_fft) / hop_length;
  }

  friend bool operator==(const StftConfig&, const StftConfig&) = default;
};

// Per-channel analysis/synthesis kernel in scalar type T, with the adjoints
// needed to backpropagate through both directions.
template <class T>
class StftKernel {
 public:
  using Complex = std::complex<T>;

  explicit StftKernel(const StftConfig& cfg) : cfg_(cfg), fft_(cfg.n_fft) {
    cfg_.validate();
    window_.assign(cfg_.window.begin(), cfg_.window.end());
  }

  const StftConfig& config() const { return cfg_; }
  std::size_t n_fft() const { return cfg_.n_fft; }
  std::size_t bins() const { return cfg_.bins(); }
  std::size_t pad() const { return cfg_.center ? cfg_.n_fft / 2 : 0; }

  // spec: frames x bins, row-major.
  void analyze(std::span<const T> x, std::span<Complex> spec) const {
    const std::size_t n = cfg_.n_fft, frames = cfg_.num_frames(x.size());
    check_spec(spec, frames);
    std::vector<Complex> buf(n);
    for (std::size_t f = 0; f < frames; ++f) {
      const std::ptrdiff_t start = static_cast<std::ptrdiff_t>(f * cfg_.hop_length) -
                                   static_cast<std::ptrdiff_t>(pad());
      for (std::size_t k = 0; k < n; ++k) {
        buf[k] = Complex(x[source_index(start + static_cast<std::ptrdiff_t>(k), x.size())] *
                             window_[k],
                         T(0));
      }
      fft_.forward(buf);
      std::copy_n(buf.begin(), bins(), spec.begin() + f * bins());
    }
  }

  // Accumulates d(loss)/dx given d(loss)/d(spec) packed as (dRe + i dIm).
  void analyze_adjoint(std::span<const Complex> grad_spec, std::span<T> grad_x) const {
    const std::size_t n = cfg_.n_fft, frames = cfg_.num_frames(grad_x.size());
    check_spec(grad_spec, frames);
    std::vector<Complex> buf(n);
    for (std::size_t f = 0; f < frames; ++f) {
      std::fill(buf.begin(), buf.end(), Complex(0));
      std::copy_n(grad_spec.begin() + f * bins(), bins(), buf.begin());
      fft_.inverse(buf);
      const std::ptrdiff_t start = static_cast<std::ptrdiff_t>(f * cfg_.hop_length) -
                                   static_cast<std::ptrdiff_t>(pad());
      for (std::size_t k = 0; k < n; ++k) {
        grad_x[source_index(start + static_cast<std::ptrdiff_t>(k), grad_x.size())] +=
            buf[k].real() * window_[k];
      }
    }
  }

  // Overlap-add synthesis into `out` (length = original signal length).
  void synthesize(std::span<const Complex> spec, std::size_t frames, std::span<T> out) const {
    check_spec(spec, frames);
    const std::size_t n = cfg_.n_fft;
    const std::vector<T> env = envelope(frames, out.size());
    std::vector<T> acc(buffer_length(frames), T(0));
    std::vector<Complex> buf(n);
    const T inv_n = T(1) / static_cast<T>(n);
    for (std::size_t f = 0; f < frames; ++f) {
      hermitian_fill(spec.subspan(f * bins(), bins()), buf);
      fft_.inverse(buf);
      const std::size_t start = f * cfg_.hop_length;
      for (std::size_t k = 0; k < n; ++k) acc[start + k] += buf[k].real() * inv_n * window_[k];
    }
    for (std::size_t i = 0; i < out.size(); ++i) {
      const std::size_t p = i + pad();
      out[i] = p < acc.size() ? acc[p] / env[i] : T(0);
    }
  }

  // Accumulates d(loss)/d(spec) given d(loss)/d(out).
  void synthesize_adjoint(std::span<const T> grad_out, std::size_t frames,
                          std::span<Complex> grad_spec) const {
    check_spec(grad_spec, frames);
    const std::size_t n = cfg_.n_fft, nb = bins();
    const std::vector<T> env = envelope(frames, grad_out.size());
    std::vector<T> acc(buffer_length(frames), T(0));
    for (std::size_t i = 0; i < grad_out.size(); ++i) {
      const std::size_t p = i + pad();
      if (p < acc.size()) acc[p] = grad_out[i] / env[i];
    }
    std::vector<Complex> buf(n);
    const T inv_n = T(1) / static_cast<T>(n);
    for (std::size_t f = 0; f < frames; ++f) {
      const std::size_t start = f * cfg_.hop_length;
      for (std::size_t k = 0; k < n; ++k) buf[k] = Complex(acc[start + k] * window_[k], T(0));
      fft_.forward(buf);
      Complex* g = grad_spec.data() + f * nb;
      g[0] += Complex(buf[0].real() * inv_n, T(0));
      g[nb - 1] += Complex(buf[nb - 1].real() * inv_n, T(0));
      for (std::size_t k = 1; k + 1 < nb; ++k) g[k] += T(2) * inv_n * buf[k];
    }
  }

 private:
  void check_spec(std::span<const Complex> spec, std::size_t frames) const {
    if (spec.size() != frames * bins()) throw ShapeError("spectrogram buffer size mismatch");
  }

  std::size_t buffer_length(std::size_t frames) const {
    return cfg_.n_fft + cfg_.hop_length * (frames - 1);
  }

  // Reflect-padding index map (numpy "reflect"; repeats for short signals).
  static std::size_t source_index(std::ptrdiff_t i, std::size_t length) {
    if (length == 1) return 0;
    const std::ptrdiff_t len = static_cast<std::ptrdiff_t>(length);
    const std::ptrdiff_t period = 2 * (len - 1);
    i %= period;
    if (i < 0) i += period;
    return static_cast<std::size_t>(i < len ? i : period - i);
  }

  void hermitian_fill(std::span<const Complex> half, std::vector<Complex>& full) const {
    const std::size_t n = cfg_.n_fft, nb = bins();
    full[0] = Complex(half[0].real(), T(0));
    full[nb - 1] = Complex(half[nb - 1].real(), T(0));
    for (std::size_t k = 1; k + 1 < nb; ++k) {
      full[k] = half[k];
      full[n - k] = std::conj(half[k]);
    }
  }

  // Summed squared window over the output region.
  std::vector<T> envelope(std::size_t frames, std::size_t length) const {
    std::vector<double> acc(buffer_length(frames), 0.0);
    for (std::size_t f = 0; f < frames; ++f) {
      for (std::size_t k = 0; k < cfg_.n_fft; ++k) {
        acc[f * cfg_.hop_length + k] += cfg_.window[k] * cfg_.window[k];
      }
    }
    std::vector<T> env(length);
    for (std::size_t i = 0; i < length; ++i) {
      const std::size_t p = i + pad();
      const double e = p < acc.size() ? acc[p] : 0.0;
      if (e < 1e-11) {
        throw DegenerateWindowError("window-square envelope vanishes inside the output region");
      }
      env[i] = static_cast<T>(e);
    }
    return env;
  }

  StftConfig cfg_;
  Fft<T> fft_;
  std::vector<T> window_;
};

// Complex one-sided spectrogram, values[(c * frames + t) * bins + f].
struct ComplexSpectrogram {
  std::size_t channels = 0;
  std::size_t frames = 0;
  std::size_t bins = 0;
  std::vector<std::complex<double>> values;
  StftConfig config;
  std::size_t original_length = 0;
  int sample_rate = 0;

  std::complex<double>& at(std::size_t c, std::size_t t, std::size_t f) {
    return values[(c * frames + t) * bins + f];
  }
  const std::complex<double>& at(std::size_t c, std::size_t t, std::size_t f) const {
    return values[(c * frames + t) * bins + f];
  }
};

inline ComplexSpectrogram stft(const Waveform& w, const StftConfig& cfg = {}) {
  w.validate();
  if (w.frames == 0) throw EmptyInputError("stft of an empty waveform");
  StftKernel<double> kernel(cfg);
  ComplexSpectrogram s;
  s.channels = w.channels;
  s.frames = cfg.num_frames(w.frames);
  s.bins = cfg.bins();
  s.values.resize(s.channels * s.frames * s.bins);
  s.config = cfg;
  s.original_length = w.frames;
  s.sample_rate = w.sample_rate;
  std::vector<double> x(w.frames);
  for (std::size_t c = 0; c < w.channels; ++c) {
    const auto ch = w.channel(c);
    std::copy(ch.begin(), ch.end(), x.begin());
    kernel.analyze(x, std::span(s.values).subspan(c * s.frames * s.bins, s.frames * s.bins));
  }
  return s;
}

inline Waveform istft(const ComplexSpectrogram& s, const StftConfig& cfg) {
  if (!(s.config == cfg)) throw ConfigError("istft config differs from the spectrogram's");
  StftKernel<double> kernel(cfg);
  Waveform w(s.channels, s.original_length, s.sample_rate > 0 ? s.sample_rate : 44100);
  std::vector<double> out(s.original_length);
  for (std::size_t c = 0; c < s.channels; ++c) {
    kernel.synthesize(std::span(s.values).subspan(c * s.frames * s.bins, s.frames * s.bins),
                      s.frames, out);
    auto ch = w.channel(c);
    for (std::size_t i = 0; i < out.size(); ++i) ch[i] = static_cast<float>(out[i]);
  }
  return w;
}

inline Waveform istft(const ComplexSpectrogram& s) { return istft(s, s.config); }

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

struct MelFilterbank {
  std::size_t n_mels = 0;
  std::size_t n_fft = 0;
  int sample_rate = 0;
  std::vector<double> weights;  // n_mels x (n_fft/2 + 1)

  std::size_t bins() const { return n_fft / 2 + 1; }
  double weight(std::size_t m, std::size_t f) const { return weights[m * bins() + f]; }
};

// HTK-scale triangular filters with band edges equally spaced in mel. A
// filter too narrow to contain any FFT bin gets unit weight on the bin
// nearest its center, so every row has positive mass.
inline MelFilterbank mel_filterbank(std::size_t n_fft, std::size_t n_mels, int sample_rate,
                                    double f_min, double f_max) {
  if (n_mels < 1) throw ArgumentError("mel_filterbank needs n_mels >= 1");
  if (n_fft < 2) throw ArgumentError("mel_filterbank needs n_fft >= 2");
  if (!(f_min >= 0.0 && f_min < f_max && f_max <= sample_rate / 2.0)) {
    throw ArgumentError("mel_filterbank needs 0 <= f_min < f_max <= sample_rate / 2");
  }
  MelFilterbank fb;
  fb.n_mels = n_mels;
  fb.n_fft = n_fft;
  fb.sample_rate = sample_rate;
  const std::size_t nb = fb.bins();
  fb.weights.assign(n_mels * nb, 0.0);

  const double mel_lo = hz_to_mel(f_min), mel_hi = hz_to_mel(f_max);
  std::vector<double> edges(n_mels + 2);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    edges[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * static_cast<double>(i) /
                                      static_cast<double>(n_mels + 1));
  }
  const double bin_hz = static_cast<double>(sample_rate) / static_cast<double>(n_fft);
  for (std::size_t m = 0; m < n_mels; ++m) {
    const double lo = edges[m], mid = edges[m + 1], hi = edges[m + 2];
    double mass = 0.0;
    for (std::size_t f = 0; f < nb; ++f) {
      const double hz = static_cast<double>(f) * bin_hz;
      double v = 0.0;
      if (hz > lo && hz <= mid) v = (hz - lo) / (mid - lo);
      else if (hz > mid && hz < hi) v = (hi - hz) / (hi - mid);
      fb.weights[m * nb + f] = v;
      mass += v;
    }
    if (mass <= 0.0) {
      const auto nearest = static_cast<std::size_t>(std::lround(mid / bin_hz));
      fb.weights[m * nb + std::min(nearest, nb - 1)] = 1.0;
    }
  }
  return fb;
}

// Mel-projected magnitudes per channel: result[(c * frames + t) * n_mels + m].
struct MelSpectrogram {
  std::size_t channels = 0, frames = 0, n_mels = 0;
  std::vector<double> values;
};

inline MelSpectrogram mel_spectrogram(const Waveform& w, std::size_t n_fft,
                                      const MelFilterbank& fb) {
  const ComplexSpectrogram s = stft(w, StftConfig::hann(n_fft, n_fft / 4));
  if (fb.bins() != s.bins) throw ArgumentError("mel filterbank does not match n_fft");
  MelSpectrogram out;
  out.channels = s.channels;
  out.frames = s.frames;
  out.n_mels = fb.n_mels;
  out.values.assign(s.channels * s.frames * fb.n_mels, 0.0);
  std::vector<double> mag(s.bins);
  for (std::size_t c = 0; c < s.channels; ++c) {
    for (std::size_t t = 0; t < s.frames; ++t) {
      for (std::size_t f = 0; f < s.bins; ++f) mag[f] = std::abs(s.at(c, t, f));
      double* dst = out.values.data() + (c * s.frames + t) * fb.n_mels;
      for (std::size_t m = 0; m < fb.n_mels; ++m) {
        double acc = 0.0;
        for (std::size_t f = 0; f < s.bins; ++f) acc += fb.weights[m * s.bins + f] * mag[f];
        dst[m] = acc;
      }
    }
  }
  return out;
}

}  // namespace dttbsr
