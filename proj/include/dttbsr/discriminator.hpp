#pragma once

// Multi-resolution STFT discriminator. Each scale sees the complex STFT as
// 2C real channels and runs a small 2-D conv stack with leaky ReLU; every
// pre-activation map is kept for feature matching.

#include <string>
#include <vector>

#include "dttbsr/audio_io.hpp"
#include "dttbsr/nn.hpp"
#include "dttbsr/spectral.hpp"

namespace dttbsr {

struct DiscriminatorConfig {
  std::vector<std::size_t> stft_windows{2048, 1024, 512, 256, 128};
  std::vector<std::size_t> conv_channels{32, 64, 128, 256};
  double leaky_slope = 0.2;
  std::size_t channels = 2;

  void validate() const {
    if (stft_windows.size() < 2) throw ConfigError("discriminator needs at least 2 STFT scales");
    for (std::size_t i = 0; i < stft_windows.size(); ++i) {
      const std::size_t w = stft_windows[i];
      if (w < 8 || (w & (w - 1)) != 0) throw ConfigError("discriminator windows must be powers of two >= 8");
      if (i > 0 && w >= stft_windows[i - 1]) throw ConfigError("discriminator windows must strictly decrease");
    }
    if (conv_channels.size() != 4) throw ConfigError("discriminator conv schedule needs 4 entries");
    for (std::size_t c : conv_channels) {
      if (c == 0) throw ConfigError("discriminator conv channels must be positive");
    }
    if (!(leaky_slope >= 0.0 && leaky_slope < 1.0)) throw ConfigError("leaky slope must lie in [0, 1)");
    if (channels == 0) throw ConfigError("discriminator channel count must be positive");
  }

  std::size_t max_window() const { return stft_windows.front(); }

  friend bool operator==(const DiscriminatorConfig&, const DiscriminatorConfig&) = default;
};

template <class T>
struct DiscriminatorOutput {
  std::vector<nn::Tensor<T>> logits;                 // per scale, [B, 1, frames', bins']
  std::vector<std::vector<nn::Tensor<T>>> features;  // per scale, ordered pre-activation maps
};

template <class T>
class Discriminator {
 public:
  using Tensor = nn::Tensor<T>;

  Discriminator(nn::ParameterStore<T>& store, const DiscriminatorConfig& cfg, const std::string& prefix = "disc")
      : cfg_(cfg) {
    cfg_.validate();
    const auto& ch = cfg.conv_channels;
    for (std::size_t s = 0; s < cfg.stft_windows.size(); ++s) {
      const std::string p = prefix + ".scale" + std::to_string(s);
      const std::size_t w = cfg.stft_windows[s];
      Scale sc;
      sc.stft = StftConfig::hann(w, w / 4);
      double energy = 0.0;
      for (double v : sc.stft.window) energy += v * v;
      sc.norm = static_cast<T>(1.0 / std::sqrt(energy));
      sc.convs.emplace_back(store, p + ".conv0", 2 * cfg.channels, ch[0], std::pair<std::size_t, std::size_t>{3, 9},
                            std::pair<std::size_t, std::size_t>{1, 1}, std::pair<std::size_t, std::size_t>{1, 4});
      sc.convs.emplace_back(store, p + ".conv1", ch[0], ch[1], std::pair<std::size_t, std::size_t>{3, 9},
                            std::pair<std::size_t, std::size_t>{1, 2}, std::pair<std::size_t, std::size_t>{1, 4});
      sc.convs.emplace_back(store, p + ".conv2", ch[1], ch[2], std::pair<std::size_t, std::size_t>{3, 9},
                            std::pair<std::size_t, std::size_t>{1, 2}, std::pair<std::size_t, std::size_t>{1, 4});
      sc.convs.emplace_back(store, p + ".conv3", ch[2], ch[3], std::pair<std::size_t, std::size_t>{3, 3},
                            std::pair<std::size_t, std::size_t>{1, 1}, std::pair<std::size_t, std::size_t>{1, 1});
      sc.out = nn::Conv2d<T>(store, p + ".out", ch[3], 1, {1, 1});
      scales_.push_back(std::move(sc));
    }
  }

  const DiscriminatorConfig& config() const { return cfg_; }

  // wave: [B, C, T] with T >= the largest window.
  DiscriminatorOutput<T> forward(const Tensor& wave) const {
    if (wave.dim() != 3 || wave.shape()[1] != cfg_.channels) {
      throw ShapeError("discriminator expects [B, " + std::to_string(cfg_.channels) + ", T], got " +
                       nn::to_string(wave.shape()));
    }
    const std::size_t batch = wave.shape()[0], c = cfg_.channels, length = wave.shape()[2];
    if (length < cfg_.max_window()) {
      throw LengthError("discriminator input of " + std::to_string(length) + " samples is shorter than window " +
                        std::to_string(cfg_.max_window()));
    }
    const auto flat = nn::reshape(wave, {batch * c, length});
    const T slope = static_cast<T>(cfg_.leaky_slope);
    DiscriminatorOutput<T> out;
    for (const Scale& sc : scales_) {
      auto spec = nn::scale(nn::stft(flat, sc.stft), sc.norm);  // [BC, frames, bins, 2]
      const std::size_t frames = spec.shape()[1], bins = spec.shape()[2];
      auto x = nn::reshape(nn::permute(nn::reshape(spec, {batch, c, frames, bins, 2}), {0, 1, 4, 2, 3}),
                           {batch, 2 * c, frames, bins});
      std::vector<Tensor> feats;
      for (const auto& conv : sc.convs) {
        auto pre = conv(x);
        feats.push_back(pre);
        x = nn::leaky_relu(pre, slope);
      }
      out.logits.push_back(sc.out(x));
      out.features.push_back(std::move(feats));
    }
    return out;
  }

  DiscriminatorOutput<T> forward(const Waveform& w) const {
    std::vector<T> data(w.samples.begin(), w.samples.end());
    return forward(Tensor::from_vector({1, w.channels, w.frames}, std::move(data)));
  }

 private:
  struct Scale {
    StftConfig stft;
    T norm = T(1);
    std::vector<nn::Conv2d<T>> convs;
    nn::Conv2d<T> out;
  };
  DiscriminatorConfig cfg_;
  std::vector<Scale> scales_;
};

}  // namespace dttbsr
