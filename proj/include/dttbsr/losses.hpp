#pragma once

// Training objective: multi-resolution mel L1, hinge adversarial terms,
// normalized feature matching, and their weighted composite.

#include <cmath>
#include <vector>

#include "dttbsr/audio_io.hpp"
#include "dttbsr/discriminator.hpp"
#include "dttbsr/nn.hpp"
#include "dttbsr/spectral.hpp"

namespace dttbsr {

struct LossWeights {
  double lambda_mms = 45.0;
  double lambda_adv = 2.0;
  double lambda_feat = 4.0;

  void validate() const {
    if (!(lambda_mms >= 0.0 && lambda_adv >= 0.0 && lambda_feat >= 0.0)) {
      throw ConfigError("loss weights must be non-negative");
    }
  }
  friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

struct LossReport {
  double mms = 0.0, adv = 0.0, feat = 0.0, total = 0.0;
};

inline LossReport composite_loss(double mms, double adv, double feat, const LossWeights& w = {}) {
  return {mms, adv, feat, w.lambda_mms * mms + w.lambda_adv * adv + w.lambda_feat * feat};
}

struct MelLossConfig {
  std::vector<std::size_t> windows{2048, 1024, 512, 256};
  std::vector<std::size_t> mel_bins{160, 80, 40, 20};
  int sample_rate = 44100;
  bool log_magnitude = false;
  double log_eps = 1e-5;

  void validate() const {
    if (windows.empty()) throw ArgumentError("mel loss needs at least one window");
    if (windows.size() != mel_bins.size()) throw ArgumentError("mel loss windows and mel_bins differ in length");
    if (sample_rate <= 0) throw ArgumentError("mel loss sample rate must be positive");
  }
  friend bool operator==(const MelLossConfig&, const MelLossConfig&) = default;
};

// Mean over windows of mean |mel(|STFT(est)|) - mel(|STFT(ref)|)|, hop = window/4.
template <class T>
class MultiMelLoss {
 public:
  using Tensor = nn::Tensor<T>;

  explicit MultiMelLoss(const MelLossConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    for (std::size_t i = 0; i < cfg.windows.size(); ++i) {
      const std::size_t w = cfg.windows[i];
      const MelFilterbank fb = mel_filterbank(w, cfg.mel_bins[i], cfg.sample_rate, 0.0, cfg.sample_rate / 2.0);
      std::vector<T> weights(fb.weights.begin(), fb.weights.end());
      resolutions_.push_back({StftConfig::hann(w, w / 4),
                              Tensor::from_vector({fb.n_mels, fb.bins()}, std::move(weights))});
    }
  }

  const MelLossConfig& config() const { return cfg_; }

  // est, ref: [B, C, T] (or any [N, T]-reshapeable layout with equal shapes).
  Tensor operator()(const Tensor& est, const Tensor& ref) const {
    if (est.shape() != ref.shape()) {
      throw ArgumentError("mel loss operands differ in shape: " + nn::to_string(est.shape()) + " vs " +
                          nn::to_string(ref.shape()));
    }
    const std::size_t length = est.shape().back();
    const std::size_t rows = est.numel() / length;
    const auto e = nn::reshape(est, {rows, length});
    const auto r = nn::reshape(ref, {rows, length});
    Tensor total;
    for (const auto& res : resolutions_) {
      auto diff = nn::sub(project(e, res), project(r, res));
      auto term = nn::mean(nn::abs(diff));
      total = total.defined() ? nn::add(total, term) : term;
    }
    return nn::scale(total, T(1) / static_cast<T>(resolutions_.size()));
  }

 private:
  struct Resolution {
    StftConfig stft;
    Tensor filterbank;  // [n_mels, bins]
  };

  Tensor project(const Tensor& x, const Resolution& res) const {
    auto mel = nn::linear(nn::complex_abs(nn::stft(x, res.stft)), res.filterbank);
    return cfg_.log_magnitude ? nn::log(nn::add_scalar(mel, static_cast<T>(cfg_.log_eps))) : mel;
  }

  MelLossConfig cfg_;
  std::vector<Resolution> resolutions_;
};

inline void require_same_layout(const Waveform& a, const Waveform& b, const char* what) {
  a.validate();
  b.validate();
  if (!a.same_layout(b)) throw ArgumentError(std::string(what) + ": waveforms differ in shape or rate");
}

inline double multi_mel_stft_loss(const Waveform& est, const Waveform& ref, const MelLossConfig& cfg) {
  require_same_layout(est, ref, "multi_mel_stft_loss");
  if (est.frames == 0) throw EmptyInputError("multi_mel_stft_loss of empty waveforms");
  nn::NoGradGuard no_grad;
  MelLossConfig c = cfg;
  c.sample_rate = est.sample_rate;
  MultiMelLoss<double> loss(c);
  auto to_tensor = [](const Waveform& w) {
    return nn::Tensor<double>::from_vector({w.channels, w.frames},
                                           std::vector<double>(w.samples.begin(), w.samples.end()));
  };
  return loss(to_tensor(est), to_tensor(ref)).item();
}

inline double multi_mel_stft_loss(const Waveform& est, const Waveform& ref, const std::vector<std::size_t>& windows,
                                  const std::vector<std::size_t>& mel_bins) {
  MelLossConfig cfg;
  cfg.windows = windows;
  cfg.mel_bins = mel_bins;
  return multi_mel_stft_loss(est, ref, cfg);
}

// Mean over scales of mean(max(0, 1 - logit)).
template <class T>
nn::Tensor<T> hinge_adv_generator(const DiscriminatorOutput<T>& fake) {
  if (fake.logits.empty()) throw ArgumentError("hinge loss on an empty discriminator output");
  nn::Tensor<T> total;
  for (const auto& logit : fake.logits) {
    auto term = nn::mean(nn::relu(nn::add_scalar(nn::scale(logit, T(-1)), T(1))));
    total = total.defined() ? nn::add(total, term) : term;
  }
  return nn::scale(total, T(1) / static_cast<T>(fake.logits.size()));
}

// Mean over scales of mean(max(0, 1 - real)) + mean(max(0, 1 + fake)).
template <class T>
nn::Tensor<T> hinge_adv_discriminator(const DiscriminatorOutput<T>& real, const DiscriminatorOutput<T>& fake) {
  if (real.logits.size() != fake.logits.size() || real.logits.empty()) {
    throw ArgumentError("hinge discriminator loss: scale counts differ or are zero");
  }
  nn::Tensor<T> total;
  for (std::size_t s = 0; s < real.logits.size(); ++s) {
    auto r = nn::mean(nn::relu(nn::add_scalar(nn::scale(real.logits[s], T(-1)), T(1))));
    auto f = nn::mean(nn::relu(nn::add_scalar(fake.logits[s], T(1))));
    auto term = nn::add(r, f);
    total = total.defined() ? nn::add(total, term) : term;
  }
  return nn::scale(total, T(1) / static_cast<T>(real.logits.size()));
}

// Mean over scales and layers of mean|f_real - f_fake| / (mean|f_real| + eps).
template <class T>
nn::Tensor<T> feature_matching_loss(const DiscriminatorOutput<T>& real, const DiscriminatorOutput<T>& fake,
                                    double eps = 1e-8) {
  if (real.features.size() != fake.features.size()) {
    throw ArgumentError("feature matching: scale counts differ");
  }
  nn::Tensor<T> total;
  std::size_t count = 0;
  for (std::size_t s = 0; s < real.features.size(); ++s) {
    if (real.features[s].size() != fake.features[s].size()) {
      throw ArgumentError("feature matching: layer counts differ at scale " + std::to_string(s));
    }
    for (std::size_t l = 0; l < real.features[s].size(); ++l) {
      const auto& fr = real.features[s][l];
      const auto& ff = fake.features[s][l];
      if (fr.shape() != ff.shape()) throw ArgumentError("feature matching: feature shapes differ");
      auto num = nn::mean(nn::abs(nn::sub(fr, ff)));
      auto den = nn::add_scalar(nn::mean(nn::abs(fr)), static_cast<T>(eps));
      auto term = nn::div(num, den);
      total = total.defined() ? nn::add(total, term) : term;
      ++count;
    }
  }
  if (count == 0) throw ArgumentError("feature matching on outputs without features");
  return nn::scale(total, T(1) / static_cast<T>(count));
}

// Differentiable weighted sum matching composite_loss.
template <class T>
nn::Tensor<T> composite_objective(const nn::Tensor<T>& mms, const nn::Tensor<T>& adv, const nn::Tensor<T>& feat,
                                  const LossWeights& w) {
  return nn::add(nn::add(nn::scale(mms, static_cast<T>(w.lambda_mms)), nn::scale(adv, static_cast<T>(w.lambda_adv))),
                 nn::scale(feat, static_cast<T>(w.lambda_feat)));
}

}  // namespace dttbsr
