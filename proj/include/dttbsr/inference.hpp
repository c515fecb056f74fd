#pragma once

// Whole-file restoration: overlapping fixed-length chunks blended with
// trapezoidal crossfades normalized by the summed weights.

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <vector>

#include "dttbsr/audio_io.hpp"
#include "dttbsr/checkpoint.hpp"
#include "dttbsr/generator.hpp"

namespace dttbsr {

struct ChunkPlan {
  std::size_t chunk = 0;
  std::size_t overlap = 0;
  std::vector<std::size_t> starts;
};

// Chunk starts every (chunk - overlap) samples; the last chunk is aligned to
// the end of the input. Inputs no longer than one chunk get a single start.
inline ChunkPlan plan_chunks(std::size_t frames, std::size_t chunk, double overlap_fraction) {
  if (chunk == 0) throw ArgumentError("chunk length must be positive");
  if (!(overlap_fraction >= 0.0 && overlap_fraction < 1.0)) throw ArgumentError("overlap fraction must lie in [0, 1)");
  ChunkPlan plan;
  plan.chunk = chunk;
  plan.overlap = std::min(chunk - 1, static_cast<std::size_t>(std::llround(overlap_fraction * chunk)));
  if (frames <= chunk) {
    plan.starts = {0};
    return plan;
  }
  const std::size_t hop = chunk - plan.overlap;
  for (std::size_t s = 0; s + chunk < frames; s += hop) plan.starts.push_back(s);
  plan.starts.push_back(frames - chunk);
  return plan;
}

// Linear ramps of `overlap` samples at both ends; strictly positive everywhere.
inline std::vector<double> crossfade_weights(std::size_t length, std::size_t overlap) {
  std::vector<double> w(length, 1.0);
  const std::size_t ramp = std::min(overlap, length / 2);
  for (std::size_t i = 0; i < ramp; ++i) {
    const double v = (static_cast<double>(i) + 0.5) / static_cast<double>(ramp);
    w[i] = v;
    w[length - 1 - i] = v;
  }
  return w;
}

using WaveformMap = std::function<Waveform(const Waveform&)>;

inline Waveform restore_chunked(const Waveform& input, std::size_t chunk, double overlap_fraction, const WaveformMap& fn) {
  input.validate();
  const ChunkPlan plan = plan_chunks(input.frames, chunk, overlap_fraction);
  if (plan.starts.size() == 1) {
    Waveform out = fn(input);
    if (!out.same_layout(input)) throw ShapeError("restoration changed the waveform layout");
    return out;
  }
  const auto weights = crossfade_weights(chunk, plan.overlap);
  std::vector<double> acc(input.samples.size(), 0.0), wsum(input.frames, 0.0);
  Waveform piece(input.channels, chunk, input.sample_rate);
  for (std::size_t s : plan.starts) {
    for (std::size_t c = 0; c < input.channels; ++c)
      for (std::size_t t = 0; t < chunk; ++t) piece.at(c, t) = input.at(c, s + t);
    const Waveform y = fn(piece);
    if (!y.same_layout(piece)) throw ShapeError("restoration changed the chunk layout");
    for (std::size_t c = 0; c < input.channels; ++c)
      for (std::size_t t = 0; t < chunk; ++t) acc[c * input.frames + s + t] += weights[t] * y.at(c, t);
    for (std::size_t t = 0; t < chunk; ++t) wsum[s + t] += weights[t];
  }
  Waveform out(input.channels, input.frames, input.sample_rate);
  for (std::size_t c = 0; c < input.channels; ++c)
    for (std::size_t t = 0; t < input.frames; ++t) out.at(c, t) = static_cast<float>(acc[c * input.frames + t] / wsum[t]);
  return out;
}

// Generator weights loaded from a checkpoint, ready for inference.
class RestorationModel {
 public:
  explicit RestorationModel(const Checkpoint& ckpt)
      : config_(ckpt.config),
        store_(std::make_unique<nn::ParameterStore<float>>()),
        generator_(std::make_unique<Generator<float>>(*store_, config_.generator)) {
    restore_store(ckpt.tensors, *store_, "generator/");
  }

  const TrainConfig& config() const { return config_; }
  const Generator<float>& generator() const { return *generator_; }

  // Single pass; inputs shorter than n_fft are zero-padded and cropped back.
  Waveform restore(const Waveform& w) const {
    const std::size_t n_fft = config_.generator.n_fft;
    if (w.frames >= n_fft) return generator_->restore(w);
    Waveform padded(w.channels, n_fft, w.sample_rate);
    for (std::size_t c = 0; c < w.channels; ++c)
      for (std::size_t t = 0; t < w.frames; ++t) padded.at(c, t) = w.at(c, t);
    const Waveform y = generator_->restore(padded);
    Waveform out(w.channels, w.frames, w.sample_rate);
    for (std::size_t c = 0; c < w.channels; ++c)
      for (std::size_t t = 0; t < w.frames; ++t) out.at(c, t) = y.at(c, t);
    return out;
  }

  Waveform restore_chunked(const Waveform& w, double chunk_seconds = 6.0, double overlap = 0.25) const {
    const auto chunk = static_cast<std::size_t>(std::llround(chunk_seconds * w.sample_rate));
    return dttbsr::restore_chunked(w, chunk, overlap, [this](const Waveform& x) { return restore(x); });
  }

 private:
  TrainConfig config_;
  std::unique_ptr<nn::ParameterStore<float>> store_;
  std::unique_ptr<Generator<float>> generator_;
};

}  // namespace dttbsr
