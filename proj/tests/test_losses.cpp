#include <gtest/gtest.h>

#include <random>

#include "gradcheck.hpp"
#include "test_util.hpp"

using namespace dttbsr;
using test::TensorD;

namespace {

// Two scales of constant logits with differing map sizes.
DiscriminatorOutput<double> logits_of(double value) {
  DiscriminatorOutput<double> out;
  out.logits.push_back(TensorD::full({1, 1, 3, 4}, value));
  out.logits.push_back(TensorD::full({1, 1, 5, 2}, value));
  return out;
}

DiscriminatorOutput<double> features_of(std::vector<std::vector<TensorD>> layers) {
  DiscriminatorOutput<double> out;
  out.features = std::move(layers);
  return out;
}

TensorD random_map(nn::Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  std::vector<double> v(nn::numel(shape));
  for (double& x : v) x = n(rng);
  return TensorD::from_vector(std::move(shape), std::move(v));
}

TensorD scaled(const TensorD& t, double c) {
  std::vector<double> v = t.values();
  for (double& x : v) x *= c;
  return TensorD::from_vector(t.shape(), std::move(v));
}

// Mean over windows of mean |M |X| - M |Y||, through the waveform STFT path.
double mel_l1_oracle(const Waveform& a, const Waveform& b, const std::vector<std::size_t>& windows,
                     const std::vector<std::size_t>& mels) {
  double total = 0.0;
  for (std::size_t i = 0; i < windows.size(); ++i) {
    const StftConfig cfg = StftConfig::hann(windows[i], windows[i] / 4);
    const auto sa = stft(a, cfg), sb = stft(b, cfg);
    const MelFilterbank fb = mel_filterbank(windows[i], mels[i], a.sample_rate, 0.0, a.sample_rate / 2.0);
    double sum = 0.0;
    for (std::size_t c = 0; c < sa.channels; ++c)
      for (std::size_t t = 0; t < sa.frames; ++t)
        for (std::size_t m = 0; m < fb.n_mels; ++m) {
          double ma = 0.0, mb = 0.0;
          for (std::size_t f = 0; f < sa.bins; ++f) {
            ma += fb.weight(m, f) * std::abs(sa.at(c, t, f));
            mb += fb.weight(m, f) * std::abs(sb.at(c, t, f));
          }
          sum += std::abs(ma - mb);
        }
    total += sum / static_cast<double>(sa.channels * sa.frames * fb.n_mels);
  }
  return total / static_cast<double>(windows.size());
}

const std::vector<std::size_t> kWindows{256, 128, 64};
const std::vector<std::size_t> kMels{32, 16, 8};

}  // namespace

TEST(Losses, HingeGeneratorSaturationPoints) {
  EXPECT_EQ(hinge_adv_generator(logits_of(1.0)).item(), 0.0);
  EXPECT_EQ(hinge_adv_generator(logits_of(0.0)).item(), 1.0);
  EXPECT_EQ(hinge_adv_generator(logits_of(-1.0)).item(), 2.0);
  EXPECT_EQ(hinge_adv_generator(logits_of(5.0)).item(), 0.0);
}

TEST(Losses, HingeDiscriminatorSaturationPoints) {
  EXPECT_EQ(hinge_adv_discriminator(logits_of(1.0), logits_of(-1.0)).item(), 0.0);
  EXPECT_EQ(hinge_adv_discriminator(logits_of(0.0), logits_of(0.0)).item(), 2.0);
  EXPECT_EQ(hinge_adv_discriminator(logits_of(-1.0), logits_of(1.0)).item(), 4.0);
  auto one_scale = logits_of(0.0);
  one_scale.logits.pop_back();
  EXPECT_THROW(hinge_adv_discriminator(logits_of(0.0), one_scale), ArgumentError);
}

TEST(Losses, FeatureMatchingIdenticalIsZero) {
  std::mt19937_64 rng(1);
  const auto out = features_of({{random_map({1, 2, 3, 4}, rng), random_map({1, 3, 3, 2}, rng)},
                                {random_map({1, 2, 5, 4}, rng)}});
  EXPECT_EQ(feature_matching_loss(out, out).item(), 0.0);
}

TEST(Losses, FeatureMatchingOnesAgainstZeros) {
  const auto real = features_of({{TensorD::full({1, 2, 3, 3}, 1.0)}});
  const auto fake = features_of({{TensorD::zeros({1, 2, 3, 3})}});
  EXPECT_DOUBLE_EQ(feature_matching_loss(real, fake).item(), 1.0 / (1.0 + 1e-8));
}

TEST(Losses, FeatureMatchingIsScaleInvariant) {
  std::mt19937_64 rng(2);
  std::vector<std::vector<TensorD>> real_layers, fake_layers;
  for (std::size_t s = 0; s < 3; ++s) {
    real_layers.emplace_back();
    fake_layers.emplace_back();
    for (std::size_t l = 0; l < 4; ++l) {
      real_layers[s].push_back(random_map({1, 2, 4 + s, 3 + l}, rng));
      fake_layers[s].push_back(random_map({1, 2, 4 + s, 3 + l}, rng));
    }
  }
  const double base = feature_matching_loss(features_of(real_layers), features_of(fake_layers)).item();
  // The 1e-8 denominator floor bounds invariance by ~loss * 1e-8 / (c * mean|f_real|).
  for (double c : {0.1, 0.5, 7.0, 1e3}) {
    auto rs = real_layers, fs = fake_layers;
    for (auto& scale : rs)
      for (auto& t : scale) t = scaled(t, c);
    for (auto& scale : fs)
      for (auto& t : scale) t = scaled(t, c);
    EXPECT_LT(std::abs(feature_matching_loss(features_of(rs), features_of(fs)).item() - base), 1e-6) << "c = " << c;
  }
}

TEST(Losses, FeatureMatchingStructureMismatch) {
  const auto a = features_of({{TensorD::zeros({1, 1, 2, 2})}, {TensorD::zeros({1, 1, 2, 2})}});
  EXPECT_THROW(feature_matching_loss(a, features_of({{TensorD::zeros({1, 1, 2, 2})}})), ArgumentError);
  EXPECT_THROW(feature_matching_loss(a, features_of({{TensorD::zeros({1, 1, 2, 2})}, {}})), ArgumentError);
  EXPECT_THROW(feature_matching_loss(a, features_of({{TensorD::zeros({1, 1, 2, 2})}, {TensorD::zeros({1, 1, 2, 3})}})),
               ArgumentError);
}

TEST(Losses, CompositeLossWithDefaultWeights) {
  EXPECT_EQ(composite_loss(1, 1, 1).total, 51.0);
  EXPECT_EQ(composite_loss(0, 0, 0).total, 0.0);
  EXPECT_EQ(composite_loss(2, 0, 0).total, 90.0);
  const LossReport r = composite_loss(0.25, 0.5, 0.125);
  EXPECT_EQ(r.mms, 0.25);
  EXPECT_EQ(r.adv, 0.5);
  EXPECT_EQ(r.feat, 0.125);
}

TEST(Losses, CompositeLossIsLinearWithLambdaSlopes) {
  const LossWeights w{3.0, 0.5, 7.0};
  const double base = composite_loss(0.3, 0.7, 1.1, w).total;
  EXPECT_DOUBLE_EQ(composite_loss(1.3, 0.7, 1.1, w).total - base, 3.0);
  EXPECT_DOUBLE_EQ(composite_loss(0.3, 1.7, 1.1, w).total - base, 0.5);
  EXPECT_DOUBLE_EQ(composite_loss(0.3, 0.7, 2.1, w).total - base, 7.0);
}

TEST(Losses, CompositeObjectiveMatchesReport) {
  const LossWeights w;
  const double t = composite_objective(TensorD::scalar(0.3), TensorD::scalar(1.2), TensorD::scalar(0.05), w).item();
  EXPECT_DOUBLE_EQ(t, composite_loss(0.3, 1.2, 0.05, w).total);
  LossWeights bad;
  bad.lambda_adv = -1.0;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(Losses, MelLossZeroOnIdenticalAndSymmetric) {
  const Waveform a = test::random_waveform(2, 2000, 16000, 3);
  const Waveform b = test::random_waveform(2, 2000, 16000, 4);
  EXPECT_EQ(multi_mel_stft_loss(a, a, kWindows, kMels), 0.0);
  const double ab = multi_mel_stft_loss(a, b, kWindows, kMels);
  EXPECT_GT(ab, 0.0);
  EXPECT_EQ(ab, multi_mel_stft_loss(b, a, kWindows, kMels));
}

TEST(Losses, MelLossMatchesIndependentOracle) {
  const Waveform a = test::random_waveform(2, 1500, 16000, 5);
  const Waveform b = test::sine(2, 1500, 16000, 440.0, 0.5);
  const double expected = mel_l1_oracle(a, b, kWindows, kMels);
  EXPECT_NEAR(multi_mel_stft_loss(a, b, kWindows, kMels), expected, 1e-9 * expected);
}

TEST(Losses, MelLossIsHomogeneousAgainstSilence) {
  const Waveform x = test::random_waveform(1, 3000, 16000, 6, 0.4);
  Waveform x2 = x;
  for (float& v : x2.samples) v *= 2.0f;
  const Waveform silent(1, 3000, 16000);
  const double one = multi_mel_stft_loss(x, silent, kWindows, kMels);
  EXPECT_NEAR(multi_mel_stft_loss(x2, silent, kWindows, kMels), 2.0 * one, 1e-9 * one);
}

TEST(Losses, MelLossRejectsMismatchedOperands) {
  const Waveform a = test::random_waveform(1, 1000, 16000, 7);
  EXPECT_THROW(multi_mel_stft_loss(a, test::random_waveform(1, 999, 16000, 8), kWindows, kMels), ArgumentError);
  EXPECT_THROW(multi_mel_stft_loss(a, test::random_waveform(2, 1000, 16000, 8), kWindows, kMels), ArgumentError);
  EXPECT_THROW(multi_mel_stft_loss(a, a, {256, 128}, {32}), ArgumentError);
}

TEST(Losses, MelLossGradient) {
  MelLossConfig cfg;
  cfg.windows = {32, 16};
  cfg.mel_bins = {8, 4};
  cfg.sample_rate = 8000;
  MultiMelLoss<double> loss(cfg);
  std::mt19937_64 rng(9);
  auto est = test::random_tensor({1, 1, 128}, rng);
  const auto ref = TensorD::from_vector({1, 1, 128}, test::random_tensor({128}, rng).values());
  const auto r = test::grad_check([&] { return loss(est, ref); }, {est}, 1e-6, 128);
  EXPECT_LT(r.max_rel_error, 1e-3);
  EXPECT_EQ(r.checked, 128u);
}
