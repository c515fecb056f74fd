#pragma once

// Degradation effects used to synthesize (mixture, clean stem) pairs:
// compressor, lookahead limiter, tanh waveshaper, convolution reverb and a
// down/up resampling round trip.

#include <algorithm>
#include <cmath>
#include <deque>
#include <random>
#include <vector>

#include "dttbsr/audio_io.hpp"
#include "dttbsr/fft.hpp"
#include "dttbsr/ops.hpp"

namespace dttbsr {

inline double db_to_amplitude(double db) { return std::pow(10.0, db / 20.0); }
inline double amplitude_to_db(double a) { return 20.0 * std::log10(std::max(a, 1e-12)); }

namespace augment_detail {

// One-pole smoothing coefficient for a time constant in milliseconds; 0 ms is instant.
inline double pole(double ms, int sample_rate) {
  if (ms <= 0.0) return 0.0;
  return std::exp(-1.0 / (ms * 1e-3 * sample_rate));
}

inline double sample_peak(const Waveform& w, std::size_t t) {
  double p = 0.0;
  for (std::size_t c = 0; c < w.channels; ++c) p = std::max(p, std::abs(static_cast<double>(w.at(c, t))));
  return p;
}

inline double uniform(std::mt19937_64& rng, double lo, double hi) { return lo + (hi - lo) * nn::uniform01(rng); }

}  // namespace augment_detail

// Feed-forward compressor with a channel-linked peak envelope.
inline Waveform compress(const Waveform& w, double threshold_db, double ratio, double attack_ms, double release_ms,
                         double makeup_db = 0.0) {
  w.validate();
  if (!(ratio >= 1.0)) throw ArgumentError("compressor ratio must be >= 1");
  if (attack_ms < 0.0 || release_ms < 0.0) throw ArgumentError("compressor time constants must be >= 0");
  const double a_att = augment_detail::pole(attack_ms, w.sample_rate);
  const double a_rel = augment_detail::pole(release_ms, w.sample_rate);
  const double slope = 1.0 - 1.0 / ratio;
  Waveform out = w;
  double env = 0.0;
  for (std::size_t t = 0; t < w.frames; ++t) {
    const double level = augment_detail::sample_peak(w, t);
    const double a = level > env ? a_att : a_rel;
    env = a * env + (1.0 - a) * level;
    const double gain_db = std::min(0.0, (threshold_db - amplitude_to_db(env)) * slope) + makeup_db;
    const double gain = db_to_amplitude(gain_db);
    for (std::size_t c = 0; c < w.channels; ++c) out.at(c, t) = static_cast<float>(w.at(c, t) * gain);
  }
  return out;
}

// Brickwall limiter. The gain at t is the minimum required gain over the
// next `lookahead_ms`, released with a one-pole curve but never above the
// required gain, so no sample exceeds the ceiling.
inline Waveform limit(const Waveform& w, double ceiling_db, double lookahead_ms = 5.0, double release_ms = 50.0) {
  w.validate();
  if (ceiling_db > 0.0) throw ArgumentError("limiter ceiling must be <= 0 dBFS");
  const double ceiling = db_to_amplitude(ceiling_db);
  const auto look = static_cast<std::size_t>(std::lround(std::max(0.0, lookahead_ms) * 1e-3 * w.sample_rate));
  std::vector<double> required(w.frames);
  for (std::size_t t = 0; t < w.frames; ++t) {
    const double p = augment_detail::sample_peak(w, t);
    required[t] = p > ceiling ? ceiling / p : 1.0;
  }
  // Sliding-window minimum over [t, t + look] via a monotone deque.
  std::vector<double> lookahead_min(w.frames);
  std::deque<std::size_t> window;
  std::size_t next = 0;
  for (std::size_t t = 0; t < w.frames; ++t) {
    const std::size_t end = std::min(w.frames - 1, t + look);
    for (; next <= end; ++next) {
      while (!window.empty() && required[window.back()] >= required[next]) window.pop_back();
      window.push_back(next);
    }
    while (window.front() < t) window.pop_front();
    lookahead_min[t] = required[window.front()];
  }
  const double a_rel = augment_detail::pole(release_ms, w.sample_rate);
  // Largest float not above the ceiling, so rounding cannot overshoot it.
  float bound = static_cast<float>(ceiling);
  if (static_cast<double>(bound) > ceiling) bound = std::nextafter(bound, 0.0f);
  Waveform out = w;
  double gain = 1.0;
  for (std::size_t t = 0; t < w.frames; ++t) {
    gain = std::min(lookahead_min[t], a_rel * gain + (1.0 - a_rel) * lookahead_min[t]);
    for (std::size_t c = 0; c < w.channels; ++c) {
      const double v = gain == 1.0 ? w.at(c, t) : w.at(c, t) * gain;
      out.at(c, t) = std::clamp(static_cast<float>(v), -bound, bound);
    }
  }
  return out;
}

// Memoryless odd waveshaper tanh(drive * x) / tanh(drive); identity at drive 0.
inline Waveform distort(const Waveform& w, double drive) {
  w.validate();
  if (!(drive >= 0.0)) throw ArgumentError("distortion drive must be >= 0");
  Waveform out = w;
  if (drive < 1e-6) return out;
  const double norm = 1.0 / std::tanh(drive);
  for (float& v : out.samples) v = static_cast<float>(std::tanh(drive * v) * norm);
  return out;
}

// Linear convolution with `ir` (mono or per-channel), trimmed to the input
// length and mixed as (1 - wet) * dry + wet * reverberant.
inline Waveform reverb(const Waveform& w, const Waveform& ir, double wet = 1.0) {
  w.validate();
  ir.validate();
  if (ir.sample_rate != w.sample_rate) throw ArgumentError("reverb impulse response sample rate differs");
  if (ir.channels != 1 && ir.channels != w.channels) {
    throw ArgumentError("reverb impulse response must be mono or match the channel count");
  }
  if (ir.frames == 0) throw ArgumentError("reverb impulse response is empty");
  if (!(wet >= 0.0 && wet <= 1.0)) throw ArgumentError("reverb wet mix must lie in [0, 1]");
  Waveform out = w;
  std::vector<double> x(w.frames), h(ir.frames);
  for (std::size_t c = 0; c < w.channels; ++c) {
    const auto src = w.channel(c);
    const auto hc = ir.channel(ir.channels == 1 ? 0 : c);
    std::copy(src.begin(), src.end(), x.begin());
    std::copy(hc.begin(), hc.end(), h.begin());
    const std::vector<double> y = fft_convolve<double>(x, h);
    for (std::size_t t = 0; t < w.frames; ++t) {
      out.at(c, t) = static_cast<float>((1.0 - wet) * x[t] + wet * y[t]);
    }
  }
  return out;
}

// Exponentially decaying Gaussian noise reaching -60 dB after `decay_s`,
// scaled to unit energy.
inline Waveform synthesize_ir(int sample_rate, std::size_t channels, double length_s, double decay_s,
                              std::mt19937_64& rng) {
  if (sample_rate <= 0 || channels == 0 || !(length_s > 0.0) || !(decay_s > 0.0)) {
    throw ArgumentError("impulse response parameters must be positive");
  }
  const auto frames = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(length_s * sample_rate)));
  Waveform ir(channels, frames, sample_rate);
  std::normal_distribution<double> noise(0.0, 1.0);
  const double k = std::log(1000.0) / (decay_s * sample_rate);
  for (std::size_t c = 0; c < channels; ++c) {
    double energy = 0.0;
    std::vector<double> v(frames);
    for (std::size_t t = 0; t < frames; ++t) {
      v[t] = noise(rng) * std::exp(-k * static_cast<double>(t));
      energy += v[t] * v[t];
    }
    const double g = 1.0 / std::sqrt(std::max(energy, 1e-30));
    for (std::size_t t = 0; t < frames; ++t) ir.at(c, t) = static_cast<float>(v[t] * g);
  }
  return ir;
}

namespace augment_detail {

// Kaiser window sampled on u in [0, 1], linearly interpolated on lookup.
class KaiserTable {
 public:
  explicit KaiserTable(double beta, std::size_t size = 4096) : table_(size + 1) {
    const double norm = std::cyl_bessel_i(0.0, beta);
    for (std::size_t i = 0; i <= size; ++i) {
      const double u = static_cast<double>(i) / static_cast<double>(size);
      table_[i] = std::cyl_bessel_i(0.0, beta * std::sqrt(std::max(0.0, 1.0 - u * u))) / norm;
    }
  }
  double operator()(double u) const {
    const double x = std::min(1.0, std::abs(u)) * static_cast<double>(table_.size() - 1);
    const auto i = std::min(static_cast<std::size_t>(x), table_.size() - 2);
    const double f = x - static_cast<double>(i);
    return table_[i] + f * (table_[i + 1] - table_[i]);
  }

 private:
  std::vector<double> table_;
};

// Kaiser-windowed sinc interpolation of x onto out_len samples spanning the
// same duration, low-passed at `cutoff` cycles per input sample.
inline std::vector<double> resample_to(std::span<const double> x, std::size_t out_len, double cutoff) {
  constexpr double kZeroCrossings = 16.0;
  static const KaiserTable kaiser(8.6);
  const std::size_t in_len = x.size();
  std::vector<double> y(out_len, 0.0);
  if (in_len == 0 || out_len == 0) return y;
  const double step = static_cast<double>(in_len) / static_cast<double>(out_len);
  const double half_width = kZeroCrossings / (2.0 * cutoff);
  for (std::size_t j = 0; j < out_len; ++j) {
    const double pos = static_cast<double>(j) * step;
    const auto lo = static_cast<std::ptrdiff_t>(std::ceil(pos - half_width));
    const auto hi = static_cast<std::ptrdiff_t>(std::floor(pos + half_width));
    double acc = 0.0;
    for (std::ptrdiff_t k = std::max<std::ptrdiff_t>(lo, 0); k <= std::min<std::ptrdiff_t>(hi, in_len - 1); ++k) {
      const double d = pos - static_cast<double>(k);
      const double arg = 2.0 * cutoff * d;
      const double sinc = arg == 0.0 ? 1.0 : std::sin(std::numbers::pi * arg) / (std::numbers::pi * arg);
      acc += x[static_cast<std::size_t>(k)] * 2.0 * cutoff * sinc * kaiser(d / half_width);
    }
    y[j] = acc;
  }
  return y;
}

}  // namespace augment_detail

// Band-limited resample to rate * factor and back; output length equals the input length.
inline Waveform random_resample(const Waveform& w, double factor) {
  w.validate();
  if (!(factor > 0.0)) throw ArgumentError("resample factor must be positive");
  if (factor == 1.0 || w.frames == 0) return w;
  const auto mid_len = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(w.frames * factor)));
  const double ratio = static_cast<double>(mid_len) / static_cast<double>(w.frames);
  constexpr double kPassband = 0.95;
  Waveform out = w;
  std::vector<double> x(w.frames);
  for (std::size_t c = 0; c < w.channels; ++c) {
    const auto src = w.channel(c);
    std::copy(src.begin(), src.end(), x.begin());
    const auto mid = augment_detail::resample_to(x, mid_len, kPassband * 0.5 * std::min(1.0, ratio));
    const auto back = augment_detail::resample_to(mid, w.frames, kPassband * 0.5 * std::min(1.0, 1.0 / ratio));
    for (std::size_t t = 0; t < w.frames; ++t) out.at(c, t) = static_cast<float>(back[t]);
  }
  return out;
}

struct EffectChainSpec {
  struct Compressor {
    double threshold_lo = -30.0, threshold_hi = -6.0;
    double ratio_lo = 2.0, ratio_hi = 8.0;
    double attack_ms = 5.0, release_ms = 100.0, makeup_db = 0.0;
  } compressor;
  struct Limiter {
    double ceiling_db = -1.0, lookahead_ms = 5.0, release_ms = 50.0;
  } limiter;
  struct Distortion {
    double drive_lo = 1.0, drive_hi = 10.0;
  } distortion;
  struct Reverb {
    double ir_seconds = 1.0;
    double decay_lo = 0.2, decay_hi = 2.0;
    double wet_lo = 0.1, wet_hi = 0.5;
  } reverb;
  struct Resample {
    double factor_lo = 0.5, factor_hi = 1.0;
  } resample;
  struct Probabilities {
    double compressor = 0.5, limiter = 0.5, distortion = 0.5, reverb = 0.5, resample = 0.5;
  } probability;
  double output_peak_db = -1.0;
  std::uint64_t seed = 0;

  void validate() const {
    auto in_unit = [](double p) { return p >= 0.0 && p <= 1.0; };
    if (!(compressor.ratio_lo >= 1.0 && compressor.ratio_lo <= compressor.ratio_hi)) {
      throw ConfigError("compressor ratio range must satisfy 1 <= lo <= hi");
    }
    if (!(compressor.threshold_lo <= compressor.threshold_hi)) throw ConfigError("compressor threshold range inverted");
    if (!(limiter.ceiling_db <= 0.0)) throw ConfigError("limiter ceiling must be <= 0 dBFS");
    if (!(distortion.drive_lo >= 0.0 && distortion.drive_lo <= distortion.drive_hi)) {
      throw ConfigError("distortion drive range must satisfy 0 <= lo <= hi");
    }
    if (!(reverb.ir_seconds > 0.0 && reverb.decay_lo > 0.0 && reverb.decay_lo <= reverb.decay_hi)) {
      throw ConfigError("reverb length and decay range must be positive");
    }
    if (!(in_unit(reverb.wet_lo) && in_unit(reverb.wet_hi) && reverb.wet_lo <= reverb.wet_hi)) {
      throw ConfigError("reverb wet range must lie in [0, 1]");
    }
    if (!(resample.factor_lo > 0.0 && resample.factor_lo <= resample.factor_hi)) {
      throw ConfigError("resample factor range must satisfy 0 < lo <= hi");
    }
    const auto& p = probability;
    if (!(in_unit(p.compressor) && in_unit(p.limiter) && in_unit(p.distortion) && in_unit(p.reverb) &&
          in_unit(p.resample))) {
      throw ConfigError("effect probabilities must lie in [0, 1]");
    }
    if (!(output_peak_db <= 0.0)) throw ConfigError("output peak must be <= 0 dBFS");
  }

  // Every effect disabled.
  static EffectChainSpec passthrough() {
    EffectChainSpec s;
    s.probability = {0.0, 0.0, 0.0, 0.0, 0.0};
    return s;
  }
};

struct TrainingPair {
  Waveform mixture;
  Waveform target;
};

// Per-stem effects (compressor, distortion, reverb, resample), summed, then a
// bus compressor and limiter, then peak-normalized to output_peak_db when
// louder. The target stem is returned untouched.
inline TrainingPair build_training_pair(const std::vector<Waveform>& stems, std::size_t target_index,
                                        const EffectChainSpec& spec, std::mt19937_64& rng) {
  using augment_detail::uniform;
  if (stems.empty()) throw ArgumentError("build_training_pair needs at least one stem");
  if (target_index >= stems.size()) throw ArgumentError("target stem index out of range");
  spec.validate();
  for (const Waveform& s : stems) {
    s.validate();
    if (!s.same_layout(stems.front())) throw ArgumentError("stems differ in length, channels or sample rate");
  }
  const auto& p = spec.probability;
  auto chance = [&rng](double prob) { return nn::uniform01(rng) < prob; };
  auto bus_compress = [&](const Waveform& w) {
    const double thr = uniform(rng, spec.compressor.threshold_lo, spec.compressor.threshold_hi);
    const double ratio = uniform(rng, spec.compressor.ratio_lo, spec.compressor.ratio_hi);
    return compress(w, thr, ratio, spec.compressor.attack_ms, spec.compressor.release_ms, spec.compressor.makeup_db);
  };

  Waveform mix(stems.front().channels, stems.front().frames, stems.front().sample_rate);
  for (const Waveform& stem : stems) {
    Waveform x = stem;
    if (chance(p.compressor)) x = bus_compress(x);
    if (chance(p.distortion)) x = distort(x, uniform(rng, spec.distortion.drive_lo, spec.distortion.drive_hi));
    if (chance(p.reverb)) {
      const double decay = uniform(rng, spec.reverb.decay_lo, spec.reverb.decay_hi);
      const double wet = uniform(rng, spec.reverb.wet_lo, spec.reverb.wet_hi);
      x = reverb(x, synthesize_ir(x.sample_rate, x.channels, spec.reverb.ir_seconds, decay, rng), wet);
    }
    if (chance(p.resample)) x = random_resample(x, uniform(rng, spec.resample.factor_lo, spec.resample.factor_hi));
    for (std::size_t i = 0; i < mix.samples.size(); ++i) mix.samples[i] += x.samples[i];
  }
  if (chance(p.compressor)) mix = bus_compress(mix);
  if (chance(p.limiter)) mix = limit(mix, spec.limiter.ceiling_db, spec.limiter.lookahead_ms, spec.limiter.release_ms);

  const double peak = mix.peak();
  const double target_peak = db_to_amplitude(spec.output_peak_db);
  if (peak > target_peak) {
    const double g = target_peak / peak;
    for (float& v : mix.samples) v = static_cast<float>(v * g);
  }
  return {std::move(mix), stems[target_index]};
}

}  // namespace dttbsr
