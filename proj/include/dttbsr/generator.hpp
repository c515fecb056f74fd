#pragma once

// Spectrogram U-Net generator: STFT -> 1x1 conv -> N downsample blocks
// (TFC-TDF + strided conv) -> bottleneck (TFC-TDF, dual-path GRU, axial RoPE
// transformer) -> N upsample blocks (transposed conv, multiplicative skip,
// TFC-TDF) -> 1x1 conv -> iSTFT.

#include <numeric>
#include <string>
#include <vector>

#include "dttbsr/audio_io.hpp"
#include "dttbsr/nn.hpp"
#include "dttbsr/spectral.hpp"

namespace dttbsr {

struct GeneratorConfig {
  std::size_t n_blocks = 2;
  std::size_t base_dims = 64;  // G; calibrated against the 7.1M parameter budget
  std::pair<std::size_t, std::size_t> tfc_tdf_kernel{3, 3};
  std::size_t dualpath_layers = 4;
  std::size_t dualpath_heads = 2;
  std::size_t rope_repeats = 2;
  std::size_t rope_heads = 8;
  std::size_t rope_time_depth = 2;
  std::size_t rope_freq_depth = 2;
  double dropout = 0.1;
  std::size_t n_fft = 2048;
  std::size_t hop_length = 512;
  std::size_t channels = 2;
  std::size_t tdf_reduction = 4;
  std::size_t norm_groups = 4;

  StftConfig stft() const { return StftConfig::hann(n_fft, hop_length); }
  std::size_t freq_bins() const { return n_fft / 2; }  // after dropping the Nyquist bin
  std::size_t bottleneck_dims() const { return (n_blocks + 1) * base_dims; }

  void validate() const {
    if (n_blocks == 0 || base_dims == 0 || channels == 0 || rope_heads == 0 || dualpath_heads == 0 ||
        tdf_reduction == 0 || norm_groups == 0 || tfc_tdf_kernel.first == 0 || tfc_tdf_kernel.second == 0) {
      throw ConfigError("generator config counts must be positive");
    }
    if (tfc_tdf_kernel.first % 2 == 0 || tfc_tdf_kernel.second % 2 == 0) {
      throw ConfigError("TFC-TDF kernel extents must be odd for same padding");
    }
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
    if (n_fft < 4 || (n_fft & (n_fft - 1)) != 0) throw ConfigError("n_fft must be a power of two");
    if (hop_length == 0 || hop_length > n_fft / 2) throw ConfigError("hop length must lie in (0, n_fft/2]");
    if (freq_bins() % (std::size_t{1} << n_blocks) != 0) {
      throw ConfigError("n_fft/2 must be divisible by 2^n_blocks");
    }
    const std::size_t d = bottleneck_dims();
    if (d % rope_heads != 0 || (d / rope_heads) % 2 != 0) {
      throw ConfigError("bottleneck dims " + std::to_string(d) + " must split into " +
                        std::to_string(rope_heads) + " heads of even size");
    }
    if (d % dualpath_heads != 0) {
      throw ConfigError("bottleneck dims must be divisible by the dual-path head count");
    }
  }

  friend bool operator==(const GeneratorConfig&, const GeneratorConfig&) = default;
};

// Real-valued (dims x t_frames x f_bins) activation map.
struct FeatureMap {
  std::size_t dims = 0, t_frames = 0, f_bins = 0;
  std::vector<float> values;

  float& at(std::size_t d, std::size_t t, std::size_t f) { return values[(d * t_frames + t) * f_bins + f]; }
  float at(std::size_t d, std::size_t t, std::size_t f) const {
    return values[(d * t_frames + t) * f_bins + f];
  }
};

// Interleaves real/imag parts as 2C channels and drops the Nyquist bin.
inline FeatureMap pack_spectrogram(const ComplexSpectrogram& s) {
  FeatureMap m;
  m.dims = 2 * s.channels;
  m.t_frames = s.frames;
  m.f_bins = s.bins - 1;
  m.values.resize(m.dims * m.t_frames * m.f_bins);
  for (std::size_t c = 0; c < s.channels; ++c)
    for (std::size_t t = 0; t < s.frames; ++t)
      for (std::size_t f = 0; f < m.f_bins; ++f) {
        m.at(2 * c, t, f) = static_cast<float>(s.at(c, t, f).real());
        m.at(2 * c + 1, t, f) = static_cast<float>(s.at(c, t, f).imag());
      }
  return m;
}

// Inverse of pack_spectrogram; the Nyquist bin comes back as zero. `like`
// supplies the STFT geometry and original length.
inline ComplexSpectrogram unpack_spectrogram(const FeatureMap& m, const ComplexSpectrogram& like) {
  if (m.dims % 2 != 0 || m.f_bins + 1 != like.bins || m.t_frames != like.frames) {
    throw ShapeError("feature map does not match the spectrogram geometry");
  }
  ComplexSpectrogram s = like;
  s.channels = m.dims / 2;
  s.values.assign(s.channels * s.frames * s.bins, {0.0, 0.0});
  for (std::size_t c = 0; c < s.channels; ++c)
    for (std::size_t t = 0; t < s.frames; ++t)
      for (std::size_t f = 0; f < m.f_bins; ++f) s.at(c, t, f) = {m.at(2 * c, t, f), m.at(2 * c + 1, t, f)};
  return s;
}

namespace gen {

using nn::RunMode;
using nn::Tensor;

inline std::size_t norm_groups_for(std::size_t dims, std::size_t preferred) {
  return std::gcd(dims, preferred);
}

// Residual TFC-TDF unit on [B, dims, T, F]:
//   x1 = conv(gelu(norm(x)))
//   x2 = x1 + linear(gelu(norm(linear(gelu(norm(x1))))))   over the F axis
//   out = x + conv(gelu(norm(x2)))
template <class T>
class TfcTdfBlock {
 public:
  TfcTdfBlock() = default;
  TfcTdfBlock(nn::ParameterStore<T>& store, const std::string& name, std::size_t dims, std::size_t freq,
              std::pair<std::size_t, std::size_t> kernel, std::size_t reduction, std::size_t norm_groups)
      : dims_(dims), freq_(freq) {
    const std::size_t groups = norm_groups_for(dims, norm_groups);
    const std::size_t bottleneck = std::max<std::size_t>(1, freq / reduction);
    const std::pair<std::size_t, std::size_t> same{kernel.first / 2, kernel.second / 2};
    norm1_ = nn::GroupNorm<T>(store, name + ".tfc1.norm", dims, groups);
    conv1_ = nn::Conv2d<T>(store, name + ".tfc1.conv", dims, dims, kernel, {1, 1}, same);
    tdf_norm1_ = nn::GroupNorm<T>(store, name + ".tdf.norm1", dims, groups);
    tdf_fc1_ = nn::Linear<T>(store, name + ".tdf.fc1", freq, bottleneck);
    tdf_norm2_ = nn::GroupNorm<T>(store, name + ".tdf.norm2", dims, groups);
    tdf_fc2_ = nn::Linear<T>(store, name + ".tdf.fc2", bottleneck, freq);
    norm2_ = nn::GroupNorm<T>(store, name + ".tfc2.norm", dims, groups);
    conv2_ = nn::Conv2d<T>(store, name + ".tfc2.conv", dims, dims, kernel, {1, 1}, same);
  }

  Tensor<T> operator()(const Tensor<T>& x) const {
    if (x.dim() != 4 || x.shape()[1] != dims_ || x.shape()[3] != freq_) {
      throw ConfigError("TFC-TDF block expects [B, " + std::to_string(dims_) + ", T, " +
                        std::to_string(freq_) + "], got " + nn::to_string(x.shape()));
    }
    auto x1 = conv1_(nn::gelu(norm1_(x)));
    auto t = tdf_fc2_(nn::gelu(tdf_norm2_(tdf_fc1_(nn::gelu(tdf_norm1_(x1))))));
    auto x2 = nn::add(x1, t);
    return nn::add(x, conv2_(nn::gelu(norm2_(x2))));
  }

 private:
  std::size_t dims_ = 0, freq_ = 0;
  nn::GroupNorm<T> norm1_, tdf_norm1_, tdf_norm2_, norm2_;
  nn::Conv2d<T> conv1_, conv2_;
  nn::Linear<T> tdf_fc1_, tdf_fc2_;
};

template <class T>
struct DownsampleOutput {
  Tensor<T> output;  // [B, (k+1)G, T/2, F/2]
  Tensor<T> skip;    // pre-stride activation, [B, kG, T, F]
};

// TFC-TDF at in_dims followed by a 2x2 stride-2 conv adding `growth` dims.
template <class T>
class DownsampleBlock {
 public:
  DownsampleBlock() = default;
  DownsampleBlock(nn::ParameterStore<T>& store, const std::string& name, std::size_t in_dims,
                  std::size_t growth, std::size_t freq, const GeneratorConfig& cfg)
      : tfc_tdf_(store, name + ".tfc_tdf", in_dims, freq, cfg.tfc_tdf_kernel, cfg.tdf_reduction,
                 cfg.norm_groups),
        conv_(store, name + ".down", in_dims, in_dims + growth, {2, 2}, {2, 2}) {}

  DownsampleOutput<T> operator()(const Tensor<T>& x) const {
    if (x.shape()[2] % 2 != 0 || x.shape()[3] % 2 != 0) {
      throw ShapeError("downsample block needs even extents, got " + nn::to_string(x.shape()));
    }
    auto skip = tfc_tdf_(x);
    return {conv_(skip), skip};
  }

 private:
  TfcTdfBlock<T> tfc_tdf_;
  nn::Conv2d<T> conv_;
};

// 2x2 transposed conv removing `growth` dims, multiplicative skip, TFC-TDF.
template <class T>
class UpsampleBlock {
 public:
  UpsampleBlock() = default;
  UpsampleBlock(nn::ParameterStore<T>& store, const std::string& name, std::size_t out_dims,
                std::size_t growth, std::size_t freq, const GeneratorConfig& cfg)
      : conv_(store, name + ".up", out_dims + growth, out_dims, {2, 2}),
        tfc_tdf_(store, name + ".tfc_tdf", out_dims, freq, cfg.tfc_tdf_kernel, cfg.tdf_reduction,
                 cfg.norm_groups) {}

  Tensor<T> operator()(const Tensor<T>& x, const Tensor<T>& skip) const {
    auto up = conv_(x);
    if (up.shape() != skip.shape()) {
      throw ShapeError("upsample skip shape " + nn::to_string(skip.shape()) + " does not match " +
                       nn::to_string(up.shape()));
    }
    return tfc_tdf_(nn::mul(up, skip));
  }

 private:
  nn::ConvTranspose2d<T> conv_;
  TfcTdfBlock<T> tfc_tdf_;
};

// [B, D, T, F] -> sequences along `axis` (2 = time, 3 = frequency) as
// [B * other, len, D], and back.
template <class T>
Tensor<T> fold_axis(const Tensor<T>& x, int axis) {
  const std::size_t b = x.shape()[0], d = x.shape()[1], t = x.shape()[2], f = x.shape()[3];
  if (axis == 2) return nn::reshape(nn::permute(x, {0, 3, 2, 1}), {b * f, t, d});
  return nn::reshape(nn::permute(x, {0, 2, 3, 1}), {b * t, f, d});
}

template <class T>
Tensor<T> unfold_axis(const Tensor<T>& seq, int axis, const nn::Shape& shape) {
  const std::size_t b = shape[0], d = shape[1], t = shape[2], f = shape[3];
  if (axis == 2) return nn::permute(nn::reshape(seq, {b, f, t, d}), {0, 3, 2, 1});
  return nn::permute(nn::reshape(seq, {b, t, f, d}), {0, 3, 1, 2});
}

// Alternating time/frequency bidirectional-GRU passes with residuals. The D
// channels are split into `heads` groups, each with its own GRU and
// projection.
template <class T>
class DualPathBlock {
 public:
  DualPathBlock() = default;
  DualPathBlock(nn::ParameterStore<T>& store, const std::string& name, std::size_t dims, std::size_t layers,
                std::size_t heads)
      : dims_(dims), heads_(heads) {
    if (heads == 0 || dims % heads != 0) {
      throw ConfigError("dual-path block: " + std::to_string(dims) + " dims not divisible by " +
                        std::to_string(heads) + " heads");
    }
    const std::size_t group = dims / heads, hidden = (group + 1) / 2;
    for (std::size_t l = 0; l < layers; ++l) {
      const std::string p = name + ".layer" + std::to_string(l);
      Pass pass;
      pass.norm = nn::LayerNorm<T>(store, p + ".norm", dims);
      for (std::size_t h = 0; h < heads; ++h) {
        const std::string g = p + ".group" + std::to_string(h);
        pass.rnn.emplace_back(store, g + ".rnn", group, hidden);
        pass.proj.emplace_back(store, g + ".proj", 2 * hidden, group);
      }
      passes_.push_back(std::move(pass));
    }
  }

  Tensor<T> operator()(const Tensor<T>& x) const {
    if (x.dim() != 4 || x.shape()[1] != dims_) throw ConfigError("dual-path block dims mismatch");
    Tensor<T> y = x;
    const std::size_t group = dims_ / heads_;
    for (std::size_t l = 0; l < passes_.size(); ++l) {
      const int axis = (l % 2 == 0) ? 2 : 3;  // time first, then frequency
      const Pass& pass = passes_[l];
      auto seq = pass.norm(fold_axis(y, axis));
      std::vector<Tensor<T>> outs;
      for (std::size_t h = 0; h < heads_; ++h) {
        auto part = heads_ == 1 ? seq : nn::slice(seq, -1, h * group, group);
        outs.push_back(pass.proj[h](pass.rnn[h](part)));
      }
      auto merged = heads_ == 1 ? outs[0] : nn::concat(outs, -1);
      y = nn::add(y, unfold_axis(merged, axis, y.shape()));
    }
    return y;
  }

 private:
  struct Pass {
    nn::LayerNorm<T> norm;
    std::vector<nn::BiGru<T>> rnn;
    std::vector<nn::Linear<T>> proj;
  };
  std::size_t dims_ = 0, heads_ = 1;
  std::vector<Pass> passes_;
};

// Axial RoPE transformer: each repeat runs `time_depth` layers attending
// along time, then `freq_depth` layers attending along frequency.
template <class T>
class RopeTransformerBlock {
 public:
  RopeTransformerBlock() = default;
  RopeTransformerBlock(nn::ParameterStore<T>& store, const std::string& name, std::size_t dims,
                       const GeneratorConfig& cfg)
      : dims_(dims) {
    if (cfg.rope_heads == 0 || dims % cfg.rope_heads != 0) {
      throw ConfigError("RoPE transformer: dims " + std::to_string(dims) + " not divisible by " +
                        std::to_string(cfg.rope_heads) + " heads");
    }
    for (std::size_t r = 0; r < cfg.rope_repeats; ++r) {
      Repeat rep;
      for (std::size_t i = 0; i < cfg.rope_time_depth; ++i) {
        rep.time.emplace_back(store, name + ".rep" + std::to_string(r) + ".time" + std::to_string(i), dims,
                              cfg.rope_heads, cfg.dropout);
      }
      for (std::size_t i = 0; i < cfg.rope_freq_depth; ++i) {
        rep.freq.emplace_back(store, name + ".rep" + std::to_string(r) + ".freq" + std::to_string(i), dims,
                              cfg.rope_heads, cfg.dropout);
      }
      repeats_.push_back(std::move(rep));
    }
  }

  Tensor<T> operator()(const Tensor<T>& x, const nn::RunMode& mode) const {
    if (x.dim() != 4 || x.shape()[1] != dims_) throw ConfigError("RoPE transformer dims mismatch");
    Tensor<T> y = x;
    for (const Repeat& rep : repeats_) {
      if (!rep.time.empty()) {
        auto seq = fold_axis(y, 2);
        for (const auto& layer : rep.time) seq = layer(seq, mode);
        y = unfold_axis(seq, 2, y.shape());
      }
      if (!rep.freq.empty()) {
        auto seq = fold_axis(y, 3);
        for (const auto& layer : rep.freq) seq = layer(seq, mode);
        y = unfold_axis(seq, 3, y.shape());
      }
    }
    return y;
  }

 private:
  struct Repeat {
    std::vector<nn::TransformerLayer<T>> time, freq;
  };
  std::size_t dims_ = 0;
  std::vector<Repeat> repeats_;
};

}  // namespace gen

template <class T>
class Generator {
 public:
  using Tensor = nn::Tensor<T>;

  Generator(nn::ParameterStore<T>& store, const GeneratorConfig& cfg, const std::string& prefix = "gen")
      : cfg_(cfg), stft_(cfg.stft()) {
    cfg_.validate();
    const std::size_t g = cfg.base_dims;
    in_conv_ = nn::Conv2d<T>(store, prefix + ".in_conv", 2 * cfg.channels, g, {1, 1});
    std::size_t freq = cfg.freq_bins();
    for (std::size_t k = 0; k < cfg.n_blocks; ++k) {
      down_.emplace_back(store, prefix + ".down" + std::to_string(k), (k + 1) * g, g, freq, cfg);
      freq /= 2;
    }
    const std::size_t d = cfg.bottleneck_dims();
    bottleneck_ = gen::TfcTdfBlock<T>(store, prefix + ".bottleneck.tfc_tdf", d, freq, cfg.tfc_tdf_kernel,
                                      cfg.tdf_reduction, cfg.norm_groups);
    dual_path_ = gen::DualPathBlock<T>(store, prefix + ".bottleneck.dual_path", d, cfg.dualpath_layers,
                                       cfg.dualpath_heads);
    rope_ = gen::RopeTransformerBlock<T>(store, prefix + ".bottleneck.rope", d, cfg);
    for (std::size_t k = cfg.n_blocks; k-- > 0;) {
      freq *= 2;
      up_.emplace_back(store, prefix + ".up" + std::to_string(k), (k + 1) * g, g, freq, cfg);
    }
    out_conv_ = nn::Conv2d<T>(store, prefix + ".out_conv", g, 2 * cfg.channels, {1, 1});
  }

  const GeneratorConfig& config() const { return cfg_; }

  // Complex spectrogram [B*C, frames, bins, 2] -> feature map [B, 2C, frames, bins-1].
  Tensor pack(const Tensor& spec, std::size_t batch) const {
    const std::size_t c = cfg_.channels, frames = spec.shape()[1], bins = spec.shape()[2];
    auto s = nn::slice(nn::reshape(spec, {batch, c, frames, bins, 2}), 3, 0, bins - 1);
    return nn::reshape(nn::permute(s, {0, 1, 4, 2, 3}), {batch, 2 * c, frames, bins - 1});
  }

  Tensor unpack(const Tensor& feat) const {
    const std::size_t batch = feat.shape()[0], c = cfg_.channels, frames = feat.shape()[2],
                      f = feat.shape()[3];
    auto s = nn::permute(nn::reshape(feat, {batch, c, 2, frames, f}), {0, 1, 3, 4, 2});
    return nn::reshape(nn::pad(s, 3, 0, 1), {batch * c, frames, f + 1, 2});
  }

  // Spectral feature map [B, 2C, T_f, F'] -> [B, 2C, T_f, F']; T_f padded to
  // a multiple of 2^n_blocks internally.
  Tensor forward_features(const Tensor& feat, const nn::RunMode& mode) const {
    const std::size_t frames = feat.shape()[2];
    const std::size_t multiple = std::size_t{1} << cfg_.n_blocks;
    const std::size_t padded = (frames + multiple - 1) / multiple * multiple;
    Tensor x = in_conv_(padded == frames ? feat : nn::pad(feat, 2, 0, padded - frames));
    std::vector<Tensor> skips;
    for (const auto& block : down_) {
      auto out = block(x);
      skips.push_back(out.skip);
      x = out.output;
    }
    x = bottleneck_(x);
    x = dual_path_(x);
    x = rope_(x, mode);
    for (std::size_t i = 0; i < up_.size(); ++i) {
      x = up_[i](x, skips[skips.size() - 1 - i]);
    }
    x = out_conv_(x);
    return padded == frames ? x : nn::slice(x, 2, 0, frames);
  }

  // Waveform batch [B, C, T] -> restored waveform batch [B, C, T].
  Tensor forward(const Tensor& wave, const nn::RunMode& mode) const {
    if (wave.dim() != 3 || wave.shape()[1] != cfg_.channels) {
      throw ConfigError("generator expects [B, " + std::to_string(cfg_.channels) + ", T] input, got " +
                        nn::to_string(wave.shape()));
    }
    const std::size_t batch = wave.shape()[0], length = wave.shape()[2];
    if (length < cfg_.n_fft) throw LengthError("generator input shorter than n_fft");
    auto spec = nn::stft(nn::reshape(wave, {batch * cfg_.channels, length}), stft_);
    auto feat = forward_features(pack(spec, batch), mode);
    auto out = nn::istft(unpack(feat), stft_, length);
    return nn::reshape(out, {batch, cfg_.channels, length});
  }

  // Inference on a single waveform without recording a graph.
  Waveform restore(const Waveform& w) const {
    if (w.channels != cfg_.channels) {
      throw ConfigError("generator expects " + std::to_string(cfg_.channels) + " channels, got " +
                        std::to_string(w.channels));
    }
    nn::NoGradGuard no_grad;
    std::vector<T> data(w.samples.begin(), w.samples.end());
    auto x = Tensor::from_vector({1, w.channels, w.frames}, std::move(data));
    auto y = forward(x, nn::RunMode{});
    Waveform out(w.channels, w.frames, w.sample_rate);
    for (std::size_t i = 0; i < out.samples.size(); ++i) out.samples[i] = static_cast<float>(y.data()[i]);
    return out;
  }

  const std::vector<gen::DownsampleBlock<T>>& down_blocks() const { return down_; }
  const std::vector<gen::UpsampleBlock<T>>& up_blocks() const { return up_; }

 private:
  GeneratorConfig cfg_;
  StftConfig stft_;
  nn::Conv2d<T> in_conv_, out_conv_;
  std::vector<gen::DownsampleBlock<T>> down_;
  gen::TfcTdfBlock<T> bottleneck_;
  gen::DualPathBlock<T> dual_path_;
  gen::RopeTransformerBlock<T> rope_;
  std::vector<gen::UpsampleBlock<T>> up_;
};

// Trainable scalar count of a freshly constructed generator.
inline std::size_t count_parameters(const GeneratorConfig& cfg) {
  nn::ParameterStore<float> store;
  Generator<float> generator(store, cfg);
  return store.total_count();
}

}  // namespace dttbsr
