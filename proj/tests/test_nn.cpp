#include <gtest/gtest.h>

#include <numeric>

#include "gradcheck.hpp"
#include "test_util.hpp"

using namespace dttbsr;
using namespace dttbsr::nn;
using test::grad_check;
using test::Projector;
using test::random_tensor;
using test::TensorD;

namespace {

const Tensor<float>* const kNoBias = nullptr;

std::vector<TensorD> with_params(ParameterStore<double>& store, std::vector<TensorD> extra) {
  for (auto& [name, t] : store.parameters()) extra.push_back(t);
  return extra;
}

// Randomizes every parameter so zero-initialized biases and unit norms do not
// hide gradient paths.
void perturb(ParameterStore<double>& store, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (auto& [name, t] : store.parameters())
    for (double& v : t.values()) v += u(rng);
}

}  // namespace

TEST(Conv2d, PointwiseIdentityPassesInputThrough) {
  auto x = Tensor<float>::from_vector({1, 1, 2, 3}, {1, 2, 3, 4, 5, 6});
  auto w = Tensor<float>::from_vector({1, 1, 1, 1}, {1});
  EXPECT_EQ(conv2d(x, w, kNoBias).values(), x.values());
}

TEST(Conv2d, AllOnesKernelSumsWindow) {
  auto x = Tensor<float>::from_vector({1, 1, 2, 2}, {1, 2, 3, 4});
  auto w = Tensor<float>::from_vector({1, 1, 2, 2}, {1, 1, 1, 1});
  const auto y = conv2d(x, w, kNoBias);
  EXPECT_EQ(y.shape(), (Shape{1, 1, 1, 1}));
  EXPECT_EQ(y.item(), 10.0f);
}

TEST(Conv2d, OutputExtentsAndChannelMismatch) {
  auto x = Tensor<float>::zeros({2, 3, 9, 17});
  auto w = Tensor<float>::zeros({5, 3, 3, 9});
  EXPECT_EQ(conv2d(x, w, kNoBias, {1, 2}, {1, 4}).shape(), (Shape{2, 5, 9, 9}));
  auto bad = Tensor<float>::zeros({5, 2, 3, 3});
  EXPECT_THROW(conv2d(x, bad, kNoBias), ShapeError);
}

TEST(Conv2d, MatchesDirectLoopWithStrideAndPadding) {
  std::mt19937_64 rng(2);
  auto x = random_tensor({2, 3, 7, 11}, rng);
  auto w = random_tensor({4, 3, 3, 5}, rng);
  auto b = random_tensor({4}, rng);
  const auto y = conv2d(x, w, &b, {2, 3}, {1, 2});
  const std::size_t oh = (7 + 2 - 3) / 2 + 1, ow = (11 + 4 - 5) / 3 + 1;
  ASSERT_EQ(y.shape(), (Shape{2, 4, oh, ow}));
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t o = 0; o < 4; ++o)
      for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j) {
          double acc = b.values()[o];
          for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t ki = 0; ki < 3; ++ki)
              for (std::size_t kj = 0; kj < 5; ++kj) {
                const long ih = long(i * 2 + ki) - 1, iw = long(j * 3 + kj) - 2;
                if (ih < 0 || ih >= 7 || iw < 0 || iw >= 11) continue;
                acc += x.values()[((n * 3 + c) * 7 + ih) * 11 + iw] * w.values()[((o * 3 + c) * 3 + ki) * 5 + kj];
              }
          EXPECT_NEAR(y.values()[((n * 4 + o) * oh + i) * ow + j], acc, 1e-12);
        }
}

TEST(Conv2d, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(3);
  auto x = random_tensor({2, 2, 5, 6}, rng);
  auto w = random_tensor({3, 2, 3, 3}, rng);
  auto b = random_tensor({3}, rng);
  Projector proj(1);
  const auto r = grad_check([&] { return proj(conv2d(x, w, &b, {1, 2}, {1, 1})); }, {x, w, b});
  EXPECT_LT(r.max_rel_error, 1e-5);
}

TEST(ConvTranspose2d, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(4);
  auto x = random_tensor({1, 3, 3, 4}, rng);
  auto w = random_tensor({3, 2, 2, 2}, rng);
  auto b = random_tensor({2}, rng);
  Projector proj(2);
  const auto y = conv_transpose2d(x, w, &b);
  EXPECT_EQ(y.shape(), (Shape{1, 2, 6, 8}));
  EXPECT_LT(grad_check([&] { return proj(conv_transpose2d(x, w, &b)); }, {x, w, b}).max_rel_error, 1e-5);
}

TEST(Linear, IdentityAndAffineExamples) {
  auto x = Tensor<float>::from_vector({2, 3}, {1, 2, 3, 4, 5, 6});
  auto eye = Tensor<float>::from_vector({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  auto zero = Tensor<float>::zeros({3});
  EXPECT_EQ(linear(x, eye, zero).values(), x.values());
  auto w = Tensor<float>::from_vector({1, 1}, {2});
  auto b = Tensor<float>::from_vector({1}, {3});
  EXPECT_EQ(linear(Tensor<float>::from_vector({1}, {1}), w, b).item(), 5.0f);
  EXPECT_THROW(linear(x, w, b), ShapeError);
}

TEST(Linear, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(5);
  auto x = random_tensor({2, 3, 4}, rng);
  auto w = random_tensor({5, 4}, rng);
  auto b = random_tensor({5}, rng);
  Projector proj(3);
  EXPECT_LT(grad_check([&] { return proj(linear(x, w, b)); }, {x, w, b}).max_rel_error, 1e-5);
}

TEST(GroupNorm, ConstantInputNormalizesToZero) {
  auto x = Tensor<double>::full({2, 4, 3, 3}, 7.5);
  auto gamma = Tensor<double>::full({4}, 1.0), beta = Tensor<double>::zeros({4});
  const auto y = group_norm(x, 2, gamma, beta);
  for (double v : y.values()) EXPECT_EQ(v, 0.0);
}

TEST(GroupNorm, GroupsHaveZeroMeanUnitVariance) {
  std::mt19937_64 rng(6);
  auto x = random_tensor({2, 6, 4, 5}, rng, -3, 5);
  auto gamma = Tensor<double>::full({6}, 1.0), beta = Tensor<double>::zeros({6});
  const auto y = group_norm(x, 3, gamma, beta, 0.0);
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t g = 0; g < 3; ++g) {
      const double* p = y.values().data() + (n * 6 + 2 * g) * 20;
      double m = 0, v = 0;
      for (int i = 0; i < 40; ++i) m += p[i];
      m /= 40;
      for (int i = 0; i < 40; ++i) v += (p[i] - m) * (p[i] - m);
      EXPECT_NEAR(m, 0.0, 1e-12);
      EXPECT_NEAR(v / 40, 1.0, 1e-10);
    }
  EXPECT_THROW(group_norm(x, 4, gamma, beta), ConfigError);
}

TEST(GroupNorm, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(7);
  auto x = random_tensor({2, 4, 3, 3}, rng);
  auto gamma = random_tensor({4}, rng), beta = random_tensor({4}, rng);
  Projector proj(4);
  EXPECT_LT(grad_check([&] { return proj(group_norm(x, 2, gamma, beta)); }, {x, gamma, beta}).max_rel_error, 1e-5);
}

TEST(LayerNorm, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(8);
  auto x = random_tensor({3, 2, 6}, rng);
  auto gamma = random_tensor({6}, rng), beta = random_tensor({6}, rng);
  Projector proj(5);
  EXPECT_LT(grad_check([&] { return proj(layer_norm(x, gamma, beta)); }, {x, gamma, beta}).max_rel_error, 1e-5);
}

TEST(Gelu, ZeroAndReferenceValues) {
  EXPECT_EQ(gelu(Tensor<double>::scalar(0.0)).item(), 0.0);
  // x * Phi(x), Phi from erfc.
  for (double x : {-2.0, -0.5, 0.7, 3.0}) {
    const double ref = x * 0.5 * std::erfc(-x / std::sqrt(2.0));
    EXPECT_NEAR(gelu(Tensor<double>::scalar(x)).item(), ref, 1e-15);
  }
}

TEST(Gelu, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(9);
  auto x = random_tensor({40}, rng, -3, 3);
  Projector proj(6);
  EXPECT_LT(grad_check([&] { return proj(gelu(x)); }, {x}).max_rel_error, 1e-5);
}

TEST(ElementwiseOps, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(10);
  auto a = random_tensor({3, 4}, rng, 0.2, 1.5);
  auto b = random_tensor({3, 4}, rng, 0.2, 1.5);
  Projector proj(7);
  auto f = [&] {
    auto t = add(mul(a, b), div(tanh(a), b));
    t = sub(t, scale(sigmoid(b), 0.3));
    t = add(t, square(log(a)));
    t = add(t, leaky_relu(sub(a, b), 0.2));
    return proj(concat<double>({t, softmax(a), abs(sub(b, add_scalar(a, 0.05)))}, 0));
  };
  EXPECT_LT(grad_check(f, {a, b}).max_rel_error, 1e-5);
}

TEST(ShapeOps, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(11);
  auto x = random_tensor({2, 3, 4}, rng);
  Projector proj(8);
  auto f = [&] {
    auto p = permute(x, {2, 0, 1});
    auto s = slice(pad(p, 1, 1, 2), 1, 1, 3);
    return proj(reshape(s, {4, 9}));
  };
  EXPECT_LT(grad_check(f, {x}).max_rel_error, 1e-6);
}

TEST(Softmax, RowsSumToOne) {
  std::mt19937_64 rng(12);
  const auto y = softmax(random_tensor({5, 7}, rng, -20, 20));
  for (std::size_t r = 0; r < 5; ++r) {
    double s = 0;
    for (std::size_t i = 0; i < 7; ++i) s += y.values()[r * 7 + i];
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Rope, PositionZeroIsIdentity) {
  std::mt19937_64 rng(13);
  auto x = random_tensor({2, 1, 8}, rng);
  EXPECT_EQ(rope_rotate(x).values(), x.values());
}

TEST(Rope, UnitFrequencyRotatesByOneRadian) {
  auto x = Tensor<double>::from_vector({2, 2}, {1, 0, 1, 0});  // head_dim 2: theta_0 = 1
  const auto y = rope_rotate(x, 123.0);
  EXPECT_EQ(y.values()[0], 1.0);
  EXPECT_EQ(y.values()[1], 0.0);
  EXPECT_NEAR(y.values()[2], std::cos(1.0), 1e-15);
  EXPECT_NEAR(y.values()[3], std::sin(1.0), 1e-15);
}

TEST(Rope, PreservesPairNorms) {
  std::mt19937_64 rng(14);
  auto x = random_tensor({3, 50, 16}, rng, -4, 4);
  const auto y = rope_rotate(x);
  for (std::size_t i = 0; i < x.numel(); i += 2) {
    const double a = std::hypot(x.values()[i], x.values()[i + 1]);
    const double b = std::hypot(y.values()[i], y.values()[i + 1]);
    ASSERT_NEAR(a, b, 1e-7);
  }
}

TEST(Rope, InnerProductDependsOnlyOnOffset) {
  std::mt19937_64 rng(15);
  const std::size_t hd = 8, seq = 64;
  auto q = random_tensor({1, hd}, rng), k = random_tensor({1, hd}, rng);
  // Place q and k at every position, rotate, and compare pairs with equal offsets.
  std::vector<double> qs, ks;
  for (std::size_t m = 0; m < seq; ++m) {
    qs.insert(qs.end(), q.values().begin(), q.values().end());
    ks.insert(ks.end(), k.values().begin(), k.values().end());
  }
  const auto rq = rope_rotate(Tensor<double>::from_vector({seq, hd}, qs));
  const auto rk = rope_rotate(Tensor<double>::from_vector({seq, hd}, ks));
  auto dot = [&](std::size_t m, std::size_t n) {
    double s = 0;
    for (std::size_t i = 0; i < hd; ++i) s += rq.values()[m * hd + i] * rk.values()[n * hd + i];
    return s;
  };
  for (std::size_t delta : {1u, 5u, 17u})
    for (std::size_t m : {0u, 3u, 10u})
      for (std::size_t n : {0u, 7u, 20u}) EXPECT_NEAR(dot(m, n), dot(m + delta, n + delta), 1e-6);
}

TEST(Rope, OddHeadDimIsRejected) {
  EXPECT_THROW(rope_rotate(Tensor<double>::zeros({2, 3})), ArgumentError);
}

TEST(Rope, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(16);
  auto x = random_tensor({2, 5, 6}, rng);
  Projector proj(9);
  EXPECT_LT(grad_check([&] { return proj(rope_rotate(x, 100.0)); }, {x}).max_rel_error, 1e-5);
}

TEST(Attention, SingleTokenWeightIsOneAndOutputIsProjectedValue) {
  ParameterStore<double> store(1);
  MultiHeadAttention<double> attn(store, "a", 4, 2, true, 0.0);
  perturb(store, 2);
  std::mt19937_64 rng(3);
  auto x = random_tensor({2, 1, 4}, rng);
  const auto r = attn.forward(x, {});
  for (double w : r.weights.values()) EXPECT_EQ(w, 1.0);
  const auto expect = linear(linear(x, store.get("a.v.weight"), store.get("a.v.bias")), store.get("a.out.weight"),
                             store.get("a.out.bias"));
  for (std::size_t i = 0; i < expect.numel(); ++i) EXPECT_NEAR(r.output.values()[i], expect.values()[i], 1e-12);
}

TEST(Attention, WeightRowsSumToOne) {
  ParameterStore<double> store(4);
  MultiHeadAttention<double> attn(store, "a", 8, 2, true, 0.0);
  std::mt19937_64 rng(5);
  const auto r = attn.forward(random_tensor({3, 6, 8}, rng, -2, 2), {});
  ASSERT_EQ(r.weights.shape(), (Shape{6, 6, 6}));
  for (std::size_t row = 0; row < 36; ++row) {
    double s = 0;
    for (std::size_t i = 0; i < 6; ++i) s += r.weights.values()[row * 6 + i];
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
}

TEST(Attention, IndivisibleHeadsAreConfigErrors) {
  ParameterStore<double> store;
  EXPECT_THROW(MultiHeadAttention<double>(store, "a", 6, 4, true, 0.0), ConfigError);
}

TEST(Attention, GradientMatchesFiniteDifferences) {
  ParameterStore<double> store(6);
  MultiHeadAttention<double> attn(store, "a", 4, 1, true, 0.0);
  perturb(store, 7);
  std::mt19937_64 rng(8);
  auto x = random_tensor({1, 2, 4}, rng);
  Projector proj(10);
  EXPECT_LT(grad_check([&] { return proj(attn(x, {})); }, with_params(store, {x})).max_rel_error, 1e-4);
}

TEST(Attention, MultiHeadGradientMatchesFiniteDifferences) {
  ParameterStore<double> store(9);
  MultiHeadAttention<double> attn(store, "a", 8, 2, true, 0.0);
  perturb(store, 10);
  std::mt19937_64 rng(11);
  auto x = random_tensor({2, 3, 8}, rng);
  Projector proj(11);
  EXPECT_LT(grad_check([&] { return proj(attn(x, {})); }, with_params(store, {x})).max_rel_error, 1e-4);
}

TEST(BiGru, ZeroInputWithZeroBiasesGivesZeroOutput) {
  ParameterStore<double> store(12);
  BiGru<double> rnn(store, "r", 3, 4);
  const auto y = rnn(Tensor<double>::zeros({2, 1, 3}));
  EXPECT_EQ(y.shape(), (Shape{2, 1, 8}));
  for (double v : y.values()) EXPECT_EQ(v, 0.0);
}

TEST(BiGru, OutputShapeForAnyLength) {
  ParameterStore<double> store(13);
  BiGru<double> rnn(store, "r", 5, 3);
  for (std::size_t s : {1u, 2u, 9u}) EXPECT_EQ(rnn(Tensor<double>::zeros({4, s, 5})).shape(), (Shape{4, s, 6}));
}

TEST(BiGru, MatchesReferenceRecurrence) {
  ParameterStore<double> store(14);
  BiGru<double> rnn(store, "r", 2, 3);
  perturb(store, 15);
  std::mt19937_64 rng(16);
  auto x = random_tensor({1, 4, 2}, rng);
  const auto y = rnn(x);
  // Direct scalar recurrence, forward direction.
  const auto& wih = store.get("r.fwd.w_ih").values();
  const auto& whh = store.get("r.fwd.w_hh").values();
  const auto& bih = store.get("r.fwd.b_ih").values();
  const auto& bhh = store.get("r.fwd.b_hh").values();
  std::vector<double> h(3, 0.0);
  auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  for (std::size_t s = 0; s < 4; ++s) {
    std::vector<double> gi(9), gh(9), hn(3);
    for (std::size_t g = 0; g < 9; ++g) {
      gi[g] = bih[g] + wih[g * 2] * x.values()[s * 2] + wih[g * 2 + 1] * x.values()[s * 2 + 1];
      gh[g] = bhh[g];
      for (std::size_t j = 0; j < 3; ++j) gh[g] += whh[g * 3 + j] * h[j];
    }
    for (std::size_t j = 0; j < 3; ++j) {
      const double r = sig(gi[j] + gh[j]), z = sig(gi[3 + j] + gh[3 + j]);
      const double n = std::tanh(gi[6 + j] + r * gh[6 + j]);
      hn[j] = (1 - z) * n + z * h[j];
    }
    h = hn;
    for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(y.values()[s * 6 + j], h[j], 1e-12);
  }
}

TEST(BiGru, GradientMatchesFiniteDifferences) {
  ParameterStore<double> store(17);
  BiGru<double> rnn(store, "r", 3, 2);
  perturb(store, 18);
  std::mt19937_64 rng(19);
  auto x = random_tensor({2, 3, 3}, rng);
  Projector proj(12);
  EXPECT_LT(grad_check([&] { return proj(rnn(x)); }, with_params(store, {x})).max_rel_error, 1e-4);
}

TEST(Dropout, EvalModeIsIdentity) {
  std::mt19937_64 rng(20);
  auto x = random_tensor({100}, rng);
  EXPECT_EQ(dropout(x, 0.5, false, &rng).values(), x.values());
}

TEST(Dropout, ExpectationOverMasksIsIdentity) {
  std::mt19937_64 rng(21);
  auto x = Tensor<double>::from_vector({4}, {1.0, -2.0, 0.5, 3.0});
  std::vector<double> mean(4, 0.0);
  const int draws = 10000;
  for (int d = 0; d < draws; ++d) {
    const auto y = dropout(x, 0.1, true, &rng);
    for (std::size_t i = 0; i < 4; ++i) mean[i] += y.values()[i] / draws;
  }
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(mean[i] / x.values()[i], 1.0, 1e-2);
}

TEST(DifferentiableStft, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(22);
  auto x = random_tensor({2, 40}, rng);
  const auto cfg = StftConfig::hann(16, 4);
  Projector proj(13);
  EXPECT_LT(grad_check([&] { return proj(complex_abs(stft(x, cfg))); }, {x}).max_rel_error, 1e-5);
  auto s = random_tensor({1, 11, 9, 2}, rng);
  Projector proj2(14);
  EXPECT_LT(grad_check([&] { return proj2(istft(s, cfg, 40)); }, {s}).max_rel_error, 1e-5);
}

TEST(DifferentiableStft, MatchesWaveformStft) {
  const Waveform w = test::random_waveform(1, 300, 8000, 23);
  const auto cfg = StftConfig::hann(64, 16);
  const ComplexSpectrogram ref = stft(w, cfg);
  auto x = Tensor<double>::from_vector({1, 300}, std::vector<double>(w.samples.begin(), w.samples.end()));
  const auto s = stft(x, cfg);
  for (std::size_t i = 0; i < ref.values.size(); ++i) {
    EXPECT_NEAR(s.values()[2 * i], ref.values[i].real(), 1e-12);
    EXPECT_NEAR(s.values()[2 * i + 1], ref.values[i].imag(), 1e-12);
  }
}

TEST(ParameterStore, CountsAndRejectsDuplicates) {
  ParameterStore<float> store;
  store.create("a.weight", {3, 4}, Init::kUniformFanIn, 4);
  store.create("a.bias", {3}, Init::kZeros);
  EXPECT_EQ(store.total_count(), 15u);
  EXPECT_THROW(store.create("a.bias", {3}, Init::kZeros), ConfigError);
  for (float v : store.get("a.weight").values()) EXPECT_LE(std::abs(v), 0.5f);
  store.state("adamw.m.a.bias", {3});
  EXPECT_EQ(store.total_count(), 15u);
}

TEST(ParameterStore, SeedDeterminesInitialization) {
  ParameterStore<float> a(9), b(9), c(10);
  const auto ta = a.create("w", {16}, Init::kUniformFanIn, 4);
  const auto tb = b.create("w", {16}, Init::kUniformFanIn, 4);
  const auto tc = c.create("w", {16}, Init::kUniformFanIn, 4);
  EXPECT_EQ(ta.values(), tb.values());
  EXPECT_NE(ta.values(), tc.values());
}

// Heap buffers land at different alignments from one allocation to the next;
// bias gradients must not depend on where they land.
TEST(Reproducibility, BiasGradientsIgnoreBufferAlignment) {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  auto random_values = [&](std::size_t n) {
    std::vector<float> v(n);
    for (float& x : v) x = u(rng);
    return v;
  };
  const auto x_lin = random_values(64 * 32), w_lin = random_values(128 * 32), b_lin = random_values(128);
  const auto up_lin = random_values(64 * 128);
  const auto x_conv = random_values(3 * 9 * 11), w_conv = random_values(5 * 3 * 3 * 3), b_conv = random_values(5);
  const auto up_conv = random_values(5 * 9 * 11);
  std::vector<float> ref_lin, ref_conv;
  std::vector<std::vector<char>> spacers;
  std::vector<Tensor<float>> graphs;  // kept alive so later trials allocate elsewhere
  for (int trial = 0; trial < 32; ++trial) {
    spacers.emplace_back(1000 + 16 * trial);
    auto bl = Tensor<float>::from_vector({128}, b_lin, true);
    graphs.push_back(sum(mul(
        linear(Tensor<float>::from_vector({64, 32}, x_lin), Tensor<float>::from_vector({128, 32}, w_lin), &bl),
        Tensor<float>::from_vector({64, 128}, up_lin))));
    graphs.back().backward();
    auto bc = Tensor<float>::from_vector({5}, b_conv, true);
    graphs.push_back(sum(mul(conv2d(Tensor<float>::from_vector({1, 3, 9, 11}, x_conv),
                                    Tensor<float>::from_vector({5, 3, 3, 3}, w_conv), &bc, {1, 1}, {1, 1}),
                             Tensor<float>::from_vector({1, 5, 9, 11}, up_conv))));
    graphs.back().backward();
    std::vector<float> gl(bl.grad().begin(), bl.grad().end()), gc(bc.grad().begin(), bc.grad().end());
    if (trial == 0) {
      ref_lin = gl;
      ref_conv = gc;
      continue;
    }
    EXPECT_EQ(gl, ref_lin) << "trial " << trial;
    EXPECT_EQ(gc, ref_conv) << "trial " << trial;
  }
}
