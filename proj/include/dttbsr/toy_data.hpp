#pragma once

// Deterministic synthetic multitracks. Each song gets the eight stems with
// fixed recipes:
//   vocals      vibrato sine (A3..A4) with 3 harmonics, syllable envelope
//   guitar      Karplus-Strong plucks, 150..600 Hz
//   keyboard    decaying 6-harmonic tones in triads
//   synth       band-limited sawtooth pad (12 partials), slow tremolo
//   bass        sine notes, 40..100 Hz
//   drums       pitch-swept sine kicks and noise snares
//   percussion  first-difference noise clicks (hi-hat like)
//   orchestra   detuned sine ensemble with slow attack
// Every stem is scaled to a -6 dBFS peak and panned with fixed gains.

#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "dttbsr/audio_io.hpp"
#include "dttbsr/config.hpp"
#include "dttbsr/dataset.hpp"

namespace dttbsr {

struct ToySpec {
  std::size_t n_songs = 2;
  double duration = 3.0;
  int sample_rate = 44100;
  std::uint64_t seed = 0;
  std::size_t channels = 2;

  void validate() const {
    if (n_songs == 0 || !(duration > 0.0) || sample_rate <= 0 || channels == 0) {
      throw ArgumentError("toy dataset fields must be positive");
    }
  }
};

namespace toy_detail {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

inline double rand_range(std::mt19937_64& rng, double lo, double hi) { return lo + (hi - lo) * nn::uniform01(rng); }

inline std::vector<double> vocals(std::size_t n, int sr, std::mt19937_64& rng) {
  std::vector<double> y(n, 0.0);
  const double syllable = rand_range(rng, 0.25, 0.45);
  double phase = 0.0, f0 = 220.0 * std::pow(2.0, std::floor(rand_range(rng, 0, 12)) / 12.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / sr;
    if (i % static_cast<std::size_t>(syllable * sr) == 0) f0 = 220.0 * std::pow(2.0, std::floor(rand_range(rng, 0, 13)) / 12.0);
    phase += kTwoPi * f0 * (1.0 + 0.01 * std::sin(kTwoPi * 5.5 * t)) / sr;
    const double pos = std::fmod(t, syllable) / syllable;
    const double env = std::sin(std::numbers::pi * pos);
    y[i] = env * (std::sin(phase) + 0.4 * std::sin(2 * phase) + 0.2 * std::sin(3 * phase));
  }
  return y;
}

inline std::vector<double> guitar(std::size_t n, int sr, std::mt19937_64& rng) {
  std::vector<double> y(n, 0.0);
  const auto note_len = static_cast<std::size_t>(rand_range(rng, 0.3, 0.6) * sr);
  for (std::size_t start = 0; start < n; start += note_len) {
    const double f = rand_range(rng, 150.0, 600.0);
    const auto period = std::max<std::size_t>(2, static_cast<std::size_t>(sr / f));
    std::vector<double> line(period);
    for (double& v : line) v = rand_range(rng, -1.0, 1.0);
    for (std::size_t i = 0; i < note_len && start + i < n; ++i) {
      const std::size_t k = i % period;
      const double out = line[k];
      line[k] = 0.996 * 0.5 * (line[k] + line[(k + 1) % period]);
      y[start + i] = out;
    }
  }
  return y;
}

inline std::vector<double> keyboard(std::size_t n, int sr, std::mt19937_64& rng) {
  std::vector<double> y(n, 0.0);
  const auto chord_len = static_cast<std::size_t>(rand_range(rng, 0.5, 1.0) * sr);
  for (std::size_t start = 0; start < n; start += chord_len) {
    const double root = 130.81 * std::pow(2.0, std::floor(rand_range(rng, 0, 12)) / 12.0);
    const double notes[3] = {root, root * std::pow(2.0, 4.0 / 12.0), root * std::pow(2.0, 7.0 / 12.0)};
    for (std::size_t i = 0; i < chord_len && start + i < n; ++i) {
      const double t = static_cast<double>(i) / sr;
      double v = 0.0;
      for (double f : notes)
        for (int h = 1; h <= 6; ++h) v += std::sin(kTwoPi * f * h * t) / (h * h);
      y[start + i] = v * std::exp(-3.0 * t);
    }
  }
  return y;
}

inline std::vector<double> synth(std::size_t n, int sr, std::mt19937_64& rng) {
  std::vector<double> y(n, 0.0);
  const double f = rand_range(rng, 110.0, 220.0), trem = rand_range(rng, 0.5, 2.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / sr;
    double v = 0.0;
    for (int h = 1; h <= 12 && f * h < sr / 2.0; ++h) v += std::sin(kTwoPi * f * h * t) / h;
    y[i] = v * (0.7 + 0.3 * std::sin(kTwoPi * trem * t));
  }
  return y;
}

inline std::vector<double> bass(std::size_t n, int sr, std::mt19937_64& rng) {
  std::vector<double> y(n, 0.0);
  const auto note_len = static_cast<std::size_t>(rand_range(rng, 0.25, 0.5) * sr);
  double phase = 0.0;
  for (std::size_t start = 0; start < n; start += note_len) {
    const double f = rand_range(rng, 40.0, 100.0);
    for (std::size_t i = 0; i < note_len && start + i < n; ++i) {
      phase += kTwoPi * f / sr;
      const double t = static_cast<double>(i) / sr;
      y[start + i] = std::sin(phase) * std::min(1.0, t * 200.0) * std::exp(-1.5 * t);
    }
  }
  return y;
}

inline std::vector<double> drums(std::size_t n, int sr, std::mt19937_64& rng) {
  std::vector<double> y(n, 0.0);
  const auto beat = static_cast<std::size_t>(rand_range(rng, 0.2, 0.3) * sr);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (std::size_t b = 0, start = 0; start < n; ++b, start += beat) {
    const bool snare = b % 2 == 1;
    const auto len = std::min(n - start, static_cast<std::size_t>(0.15 * sr));
    double phase = 0.0;
    for (std::size_t i = 0; i < len; ++i) {
      const double t = static_cast<double>(i) / sr;
      if (snare) {
        y[start + i] += noise(rng) * std::exp(-30.0 * t);
      } else {
        phase += kTwoPi * (50.0 + 100.0 * std::exp(-40.0 * t)) / sr;
        y[start + i] += std::sin(phase) * std::exp(-20.0 * t);
      }
    }
  }
  return y;
}

inline std::vector<double> percussion(std::size_t n, int sr, std::mt19937_64& rng) {
  std::vector<double> y(n, 0.0);
  const auto step = static_cast<std::size_t>(rand_range(rng, 0.1, 0.15) * sr);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (std::size_t start = 0; start < n; start += step) {
    double prev = 0.0;
    const auto len = std::min(n - start, static_cast<std::size_t>(0.04 * sr));
    for (std::size_t i = 0; i < len; ++i) {
      const double v = noise(rng);
      y[start + i] = (v - prev) * std::exp(-100.0 * static_cast<double>(i) / sr);
      prev = v;
    }
  }
  return y;
}

inline std::vector<double> orchestra(std::size_t n, int sr, std::mt19937_64& rng) {
  std::vector<double> y(n, 0.0);
  const double root = rand_range(rng, 196.0, 392.0);
  const double freqs[4] = {root, root * 1.003, root * 1.5, root * 1.497};
  const double attack = rand_range(rng, 0.3, 0.8);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / sr;
    double v = 0.0;
    for (double f : freqs) v += std::sin(kTwoPi * f * t) + 0.3 * std::sin(kTwoPi * 2 * f * t);
    y[i] = v * std::min(1.0, t / attack);
  }
  return y;
}

inline Waveform to_stereo(const std::vector<double>& mono, std::size_t channels, int sr, double pan) {
  double peak = 0.0;
  for (double v : mono) peak = std::max(peak, std::abs(v));
  const double scale = peak > 0.0 ? 0.5 / peak : 0.0;  // -6 dBFS
  Waveform w(channels, mono.size(), sr);
  for (std::size_t c = 0; c < channels; ++c) {
    double g = 1.0;
    if (channels == 2) g = c == 0 ? std::min(1.0, 1.0 - pan) : std::min(1.0, 1.0 + pan);
    for (std::size_t t = 0; t < mono.size(); ++t) w.at(c, t) = static_cast<float>(mono[t] * scale * g);
  }
  return w;
}

}  // namespace toy_detail

// Synthesizes one song's stems, keyed by label order of stem_labels().
inline std::vector<Waveform> synthesize_toy_song(const ToySpec& spec, std::size_t song) {
  using namespace toy_detail;
  spec.validate();
  const auto n = static_cast<std::size_t>(std::llround(spec.duration * spec.sample_rate));
  std::vector<Waveform> stems;
  using Recipe = std::vector<double> (*)(std::size_t, int, std::mt19937_64&);
  const Recipe recipes[8] = {vocals, guitar, keyboard, synth, bass, drums, percussion, orchestra};
  for (std::size_t s = 0; s < 8; ++s) {
    std::seed_seq seq{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32),
                      static_cast<std::uint32_t>(song), static_cast<std::uint32_t>(s)};
    std::mt19937_64 rng(seq);
    const double pan = rand_range(rng, -0.5, 0.5);
    stems.push_back(to_stereo(recipes[s](n, spec.sample_rate, rng), spec.channels, spec.sample_rate, pan));
  }
  return stems;
}

inline std::string toy_song_name(std::size_t i) {
  std::string digits = std::to_string(i);
  return "song_" + std::string(digits.size() < 3 ? 3 - digits.size() : 0, '0') + digits;
}

inline DatasetIndex generate_toy_dataset(const ToySpec& spec, const std::filesystem::path& out_dir,
                                         const std::string& target_stem = "vocals") {
  spec.validate();
  std::filesystem::create_directories(out_dir);
  for (std::size_t i = 0; i < spec.n_songs; ++i) {
    const auto dir = out_dir / toy_song_name(i);
    std::filesystem::create_directories(dir);
    const auto stems = synthesize_toy_song(spec, i);
    for (std::size_t s = 0; s < stems.size(); ++s) write_wav(dir / (stem_labels()[s] + ".wav"), stems[s]);
  }
  return scan_dataset(out_dir, target_stem, nullptr);
}

}  // namespace dttbsr
