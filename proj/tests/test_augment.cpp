#include <gtest/gtest.h>

#include <complex>
#include <numbers>
#include <random>

#include "test_util.hpp"

using namespace dttbsr;

namespace {

double peak_abs(const Waveform& w) {
  double p = 0.0;
  for (float v : w.samples) p = std::max(p, std::abs(static_cast<double>(v)));
  return p;
}

double rms(const Waveform& w, std::size_t from = 0, std::size_t to = 0) {
  if (to == 0) to = w.frames;
  double s = 0.0;
  for (std::size_t c = 0; c < w.channels; ++c)
    for (std::size_t t = from; t < to; ++t) s += static_cast<double>(w.at(c, t)) * w.at(c, t);
  return std::sqrt(s / static_cast<double>(w.channels * (to - from)));
}

// Single-bin DFT magnitude of channel 0.
double bin_magnitude(const Waveform& w, std::size_t k) {
  std::complex<double> acc = 0.0;
  for (std::size_t t = 0; t < w.frames; ++t) {
    acc += static_cast<double>(w.at(0, t)) *
           std::polar(1.0, -2.0 * std::numbers::pi * static_cast<double>(k * t) / static_cast<double>(w.frames));
  }
  return std::abs(acc);
}

Waveform drum_hit(std::size_t frames, int rate, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 0.3);
  Waveform w(1, frames, rate);
  for (std::size_t t = 0; t < frames; ++t) {
    const double env = std::exp(-static_cast<double>(t) / (0.03 * rate));
    w.at(0, t) = static_cast<float>(std::clamp(n(rng) * env, -1.0, 1.0));
  }
  return w;
}

void expect_same_layout(const Waveform& a, const Waveform& b) {
  EXPECT_EQ(a.channels, b.channels);
  EXPECT_EQ(a.frames, b.frames);
  EXPECT_EQ(a.sample_rate, b.sample_rate);
}

}  // namespace

TEST(Compressor, BelowThresholdPassesThrough) {
  const Waveform w = test::sine(2, 4000, 16000, 300.0, 0.1);  // -20 dBFS peak
  const Waveform y = compress(w, -12.0, 4.0, 5.0, 50.0);
  for (std::size_t i = 0; i < w.samples.size(); ++i) EXPECT_NEAR(y.samples[i], w.samples[i], 1e-6);
}

TEST(Compressor, StaticCurveAtMinusNineDb) {
  const Waveform w = test::sine(1, 48000, 48000, 1000.0, db_to_amplitude(-6.0));
  const Waveform y = compress(w, -12.0, 2.0, 0.0, 0.0);
  EXPECT_NEAR(amplitude_to_db(peak_abs(y)), -9.0, 0.1);
}

TEST(Compressor, CrestFactorNeverIncreases) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const Waveform w = drum_hit(8000, 16000, seed);
    const Waveform y = compress(w, -24.0, 4.0, 0.0, 80.0);
    EXPECT_LE(peak_abs(y) / rms(y), peak_abs(w) / rms(w) * (1.0 + 1e-9)) << "seed " << seed;
  }
}

TEST(Compressor, RejectsRatioBelowOne) {
  EXPECT_THROW(compress(Waveform(1, 10, 8000), -10.0, 0.5, 1.0, 1.0), ArgumentError);
}

TEST(Limiter, BelowCeilingIsUnchanged) {
  const Waveform w = test::random_waveform(2, 3000, 16000, 4, 0.5);
  EXPECT_EQ(limit(w, -3.0).samples, w.samples);
}

TEST(Limiter, CeilingHoldsForAdversarialInputs) {
  const double ceiling_db = -6.0, ceiling = db_to_amplitude(ceiling_db);
  std::vector<Waveform> inputs;
  inputs.push_back(test::random_waveform(2, 5000, 16000, 5, 4.0));
  Waveform impulses(1, 5000, 16000);
  for (std::size_t t = 0; t < impulses.frames; t += 397) impulses.at(0, t) = (t % 2 ? -1.0f : 1.0f) * (1.0f + t * 1e-3f);
  inputs.push_back(impulses);
  Waveform dc(2, 2000, 16000);
  std::fill(dc.samples.begin(), dc.samples.end(), 0.9f);
  inputs.push_back(dc);
  inputs.push_back(test::sine(1, 4000, 16000, 7000.0, 1.0));
  for (const Waveform& w : inputs) {
    const Waveform y = limit(w, ceiling_db, 2.0, 30.0);
    expect_same_layout(y, w);
    EXPECT_LE(peak_abs(y), ceiling);
  }
}

TEST(Limiter, FullScaleSquareWaveReachesCeiling) {
  Waveform sq(1, 4000, 16000);
  for (std::size_t t = 0; t < sq.frames; ++t) sq.at(0, t) = (t / 20) % 2 ? -1.0f : 1.0f;
  EXPECT_NEAR(peak_abs(limit(sq, -3.0)), std::pow(10.0, -3.0 / 20.0), 1e-4);
}

TEST(Distortion, VanishingDriveIsIdentity) {
  const Waveform w = test::random_waveform(2, 1000, 16000, 6, 0.9);
  const Waveform y = distort(w, 1e-9);
  for (std::size_t i = 0; i < w.samples.size(); ++i) EXPECT_NEAR(y.samples[i], w.samples[i], 1e-6);
  const Waveform z = distort(w, 0.0);
  EXPECT_EQ(z.samples, w.samples);
}

TEST(Distortion, OutputIsBounded) {
  const Waveform w = test::random_waveform(1, 2000, 16000, 7, 1.0);
  for (double drive : {0.5, 2.0, 10.0}) EXPECT_LE(peak_abs(distort(w, drive)), 1.0);
}

TEST(Distortion, SineGainsThirdHarmonic) {
  const Waveform w = test::sine(1, 4800, 48000, 1000.0, 0.5);  // bin 100
  const Waveform y = distort(w, 5.0);
  const double fundamental = bin_magnitude(y, 100), third = bin_magnitude(y, 300);
  EXPECT_GT(third, 0.01 * fundamental);
  EXPECT_LT(bin_magnitude(y, 200), 1e-3 * fundamental);  // odd shaper: no even harmonics
  EXPECT_LT(bin_magnitude(w, 300), 1e-4 * bin_magnitude(w, 100));
}

TEST(Reverb, UnitImpulseIsIdentity) {
  const Waveform w = test::random_waveform(2, 1200, 16000, 8);
  Waveform ir(1, 64, 16000);
  ir.at(0, 0) = 1.0f;
  const Waveform y = reverb(w, ir, 1.0);
  for (std::size_t i = 0; i < w.samples.size(); ++i) EXPECT_NEAR(y.samples[i], w.samples[i], 1e-6);
}

TEST(Reverb, IsLinear) {
  std::mt19937_64 rng(9);
  const Waveform ir = synthesize_ir(16000, 2, 0.05, 0.03, rng);
  const Waveform a = test::random_waveform(2, 1500, 16000, 10), b = test::random_waveform(2, 1500, 16000, 11);
  Waveform sum = a;
  for (std::size_t i = 0; i < sum.samples.size(); ++i) sum.samples[i] += b.samples[i];
  const Waveform ra = reverb(a, ir, 0.7), rb = reverb(b, ir, 0.7), rs = reverb(sum, ir, 0.7);
  for (std::size_t i = 0; i < rs.samples.size(); ++i) EXPECT_NEAR(rs.samples[i], ra.samples[i] + rb.samples[i], 1e-6);
}

TEST(Reverb, ImpulseTailDecays) {
  std::mt19937_64 rng(12);
  const int rate = 16000;
  const Waveform ir = synthesize_ir(rate, 1, 1.0, 0.5, rng);
  Waveform clap(1, rate, rate);
  clap.at(0, 0) = 1.0f;
  const Waveform y = reverb(clap, ir, 1.0);
  // Block energies of the tail fall monotonically; a log-linear fit recovers the decay rate.
  const std::size_t block = rate / 10;
  std::vector<double> log_energy;
  for (std::size_t b = 0; b < 10; ++b) log_energy.push_back(std::log(rms(y, b * block, (b + 1) * block)));
  for (std::size_t b = 1; b < log_energy.size(); ++b) EXPECT_LT(log_energy[b], log_energy[b - 1]);
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t b = 0; b < log_energy.size(); ++b) {
    const double x = (static_cast<double>(b) + 0.5) * block / rate;
    sx += x, sy += log_energy[b], sxx += x * x, sxy += x * log_energy[b];
  }
  const double n = static_cast<double>(log_energy.size());
  const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  EXPECT_NEAR(slope, -std::log(1000.0) / 0.5, 0.15 * std::log(1000.0) / 0.5);
}

TEST(Reverb, RejectsRateMismatch) {
  EXPECT_THROW(reverb(Waveform(1, 100, 16000), Waveform(1, 10, 8000)), ArgumentError);
  EXPECT_THROW(reverb(Waveform(2, 100, 16000), Waveform(3, 10, 16000)), ArgumentError);
}

TEST(Resample, UnitFactorIsIdentity) {
  const Waveform w = test::random_waveform(2, 2000, 16000, 13);
  const Waveform y = random_resample(w, 1.0);
  for (std::size_t i = 0; i < w.samples.size(); ++i) EXPECT_NEAR(y.samples[i], w.samples[i], 1e-4);
}

TEST(Resample, HalfFactorRemovesUpperBand) {
  const int rate = 16000;
  const Waveform high = test::sine(1, 8000, rate, 0.4 * rate, 0.5);
  EXPECT_LT(rms(random_resample(high, 0.5)), 0.01 * rms(high));
  const Waveform low = test::sine(1, 8000, rate, 0.05 * rate, 0.5);
  const Waveform kept = random_resample(low, 0.5);
  EXPECT_NEAR(rms(kept, 500, 7500) / rms(low, 500, 7500), 1.0, 0.02);
}

TEST(Resample, LengthIsPreserved) {
  const Waveform w = test::random_waveform(2, 1001, 16000, 14);
  for (double f : {0.5, 0.63, 0.9, 1.0}) {
    const Waveform y = random_resample(w, f);
    expect_same_layout(y, w);
  }
  EXPECT_THROW(random_resample(w, 0.0), ArgumentError);
}

TEST(TrainingPair, PassthroughSingleStemIsPeakNormalizedTarget) {
  const Waveform stem = test::random_waveform(2, 2000, 16000, 15, 1.0);
  std::mt19937_64 rng(16);
  const TrainingPair p = build_training_pair({stem}, 0, EffectChainSpec::passthrough(), rng);
  EXPECT_EQ(p.target.samples, stem.samples);
  const double g = db_to_amplitude(-1.0) / peak_abs(stem);
  for (std::size_t i = 0; i < stem.samples.size(); ++i) EXPECT_NEAR(p.mixture.samples[i], stem.samples[i] * g, 1e-6);
}

TEST(TrainingPair, PassthroughTwoStemsIsNormalizedSum) {
  const Waveform a = test::random_waveform(1, 2000, 16000, 17, 0.2), b = test::random_waveform(1, 2000, 16000, 18, 0.2);
  std::mt19937_64 rng(19);
  const TrainingPair p = build_training_pair({a, b}, 1, EffectChainSpec::passthrough(), rng);
  EXPECT_EQ(p.target.samples, b.samples);
  for (std::size_t i = 0; i < a.samples.size(); ++i) EXPECT_NEAR(p.mixture.samples[i], a.samples[i] + b.samples[i], 1e-6);
}

TEST(TrainingPair, FixedSeedIsBitIdentical) {
  const std::vector<Waveform> stems = {test::random_waveform(2, 4000, 16000, 20), test::random_waveform(2, 4000, 16000, 21),
                                       test::sine(2, 4000, 16000, 220.0, 0.6)};
  EffectChainSpec spec;
  spec.reverb.ir_seconds = 0.1;
  std::mt19937_64 r1(22), r2(22), r3(23);
  const TrainingPair a = build_training_pair(stems, 2, spec, r1);
  const TrainingPair b = build_training_pair(stems, 2, spec, r2);
  const TrainingPair c = build_training_pair(stems, 2, spec, r3);
  EXPECT_EQ(a.mixture.samples, b.mixture.samples);
  EXPECT_EQ(a.target.samples, b.target.samples);
  EXPECT_NE(a.mixture.samples, c.mixture.samples);
}

TEST(TrainingPair, TargetUntouchedWithAllEffectsOn) {
  const std::vector<Waveform> stems = {test::random_waveform(2, 3000, 16000, 24, 0.9), test::sine(2, 3000, 16000, 110.0, 0.9)};
  EffectChainSpec spec;
  spec.reverb.ir_seconds = 0.1;
  spec.probability = {1.0, 1.0, 1.0, 1.0, 1.0};
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    std::mt19937_64 rng(seed);
    const TrainingPair p = build_training_pair(stems, 0, spec, rng);
    EXPECT_EQ(p.target.samples, stems[0].samples);
    expect_same_layout(p.mixture, stems[0]);
    EXPECT_LE(peak_abs(p.mixture), db_to_amplitude(-1.0) * (1.0 + 1e-6));
    for (float v : p.mixture.samples) ASSERT_TRUE(std::isfinite(v));
  }
}

TEST(TrainingPair, RejectsBadStems) {
  std::mt19937_64 rng(25);
  EXPECT_THROW(build_training_pair({}, 0, EffectChainSpec{}, rng), ArgumentError);
  EXPECT_THROW(build_training_pair({Waveform(1, 10, 8000)}, 1, EffectChainSpec{}, rng), ArgumentError);
  EXPECT_THROW(build_training_pair({Waveform(1, 10, 8000), Waveform(1, 11, 8000)}, 0, EffectChainSpec{}, rng),
               ArgumentError);
  EffectChainSpec bad;
  bad.probability.reverb = 1.5;
  EXPECT_THROW(bad.validate(), ConfigError);
}
