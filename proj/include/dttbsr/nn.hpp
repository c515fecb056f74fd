#pragma once

// Parameter registry and the layers built on the differentiable ops.

#include <cmath>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "dttbsr/ops_nn.hpp"

namespace dttbsr::nn {

enum class Init { kUniformFanIn, kZeros, kOnes };

// Ordered name -> tensor registry. Trainable entries take gradients; state
// entries (optimizer moments and the like) never do.
template <class T>
class ParameterStore {
 public:
  explicit ParameterStore(std::uint64_t seed = 0) : rng_(seed) {}

  Tensor<T> create(const std::string& name, Shape shape, Init init, std::size_t fan_in = 1) {
    if (index_.count(name)) throw ConfigError("duplicate parameter name " + name);
    std::vector<T> values(numel(shape), T(0));
    switch (init) {
      case Init::kUniformFanIn: {
        const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(fan_in, 1)));
        for (T& v : values) v = static_cast<T>((2.0 * uniform01(rng_) - 1.0) * bound);
        break;
      }
      case Init::kOnes:
        std::fill(values.begin(), values.end(), T(1));
        break;
      case Init::kZeros:
        break;
    }
    auto t = Tensor<T>::from_vector(std::move(shape), std::move(values), true);
    index_[name] = trainable_.size();
    trainable_.emplace_back(name, t);
    return t;
  }

  // Non-trainable tensor, created zero-filled on first access.
  Tensor<T>& state(const std::string& name, const Shape& shape) {
    auto it = state_index_.find(name);
    if (it == state_index_.end()) {
      state_index_[name] = states_.size();
      states_.emplace_back(name, Tensor<T>::zeros(shape));
      return states_.back().second;
    }
    Tensor<T>& t = states_[it->second].second;
    if (t.shape() != shape) throw ShapeError("state tensor " + name + " has a different shape");
    return t;
  }

  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  bool has_state(const std::string& name) const { return state_index_.count(name) > 0; }

  Tensor<T>& get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter " + name);
    return trainable_[it->second].second;
  }
  const Tensor<T>& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter " + name);
    return trainable_[it->second].second;
  }

  std::vector<std::pair<std::string, Tensor<T>>>& parameters() { return trainable_; }
  const std::vector<std::pair<std::string, Tensor<T>>>& parameters() const { return trainable_; }
  std::vector<std::pair<std::string, Tensor<T>>>& states() { return states_; }
  const std::vector<std::pair<std::string, Tensor<T>>>& states() const { return states_; }

  std::size_t total_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : trainable_) n += t.numel();
    return n;
  }

  void zero_grad() {
    for (auto& [name, t] : trainable_) t.zero_grad();
  }

 private:
  std::mt19937_64 rng_;
  std::vector<std::pair<std::string, Tensor<T>>> trainable_;
  std::map<std::string, std::size_t> index_;
  std::vector<std::pair<std::string, Tensor<T>>> states_;
  std::map<std::string, std::size_t> state_index_;
};

// Forward-pass mode: training enables dropout, which draws from rng.
struct RunMode {
  bool train = false;
  std::mt19937_64* rng = nullptr;
};

template <class T>
class Linear {
 public:
  Linear() = default;
  Linear(ParameterStore<T>& store, const std::string& name, std::size_t in, std::size_t out,
         bool bias = true)
      : weight_(store.create(name + ".weight", {out, in}, Init::kUniformFanIn, in)) {
    if (bias) bias_ = store.create(name + ".bias", {out}, Init::kZeros);
  }
  Tensor<T> operator()(const Tensor<T>& x) const {
    return linear(x, weight_, bias_.defined() ? &bias_ : nullptr);
  }

 private:
  Tensor<T> weight_, bias_;
};

template <class T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(ParameterStore<T>& store, const std::string& name, std::size_t in, std::size_t out,
         std::pair<std::size_t, std::size_t> kernel, std::pair<std::size_t, std::size_t> stride = {1, 1},
         std::pair<std::size_t, std::size_t> padding = {0, 0})
      : weight_(store.create(name + ".weight", {out, in, kernel.first, kernel.second},
                             Init::kUniformFanIn, in * kernel.first * kernel.second)),
        bias_(store.create(name + ".bias", {out}, Init::kZeros)),
        stride_(stride),
        padding_(padding) {}
  Tensor<T> operator()(const Tensor<T>& x) const { return conv2d(x, weight_, &bias_, stride_, padding_); }

 private:
  Tensor<T> weight_, bias_;
  std::pair<std::size_t, std::size_t> stride_{1, 1}, padding_{0, 0};
};

// Transposed convolution with kernel == stride.
template <class T>
class ConvTranspose2d {
 public:
  ConvTranspose2d() = default;
  ConvTranspose2d(ParameterStore<T>& store, const std::string& name, std::size_t in, std::size_t out,
                  std::pair<std::size_t, std::size_t> kernel)
      : weight_(store.create(name + ".weight", {in, out, kernel.first, kernel.second},
                             Init::kUniformFanIn, in)),
        bias_(store.create(name + ".bias", {out}, Init::kZeros)) {}
  Tensor<T> operator()(const Tensor<T>& x) const { return conv_transpose2d(x, weight_, &bias_); }

 private:
  Tensor<T> weight_, bias_;
};

template <class T>
class GroupNorm {
 public:
  GroupNorm() = default;
  GroupNorm(ParameterStore<T>& store, const std::string& name, std::size_t channels, std::size_t groups)
      : gamma_(store.create(name + ".weight", {channels}, Init::kOnes)),
        beta_(store.create(name + ".bias", {channels}, Init::kZeros)),
        groups_(groups) {
    if (groups == 0 || channels % groups != 0) throw ConfigError("GroupNorm: channels not divisible by groups");
  }
  Tensor<T> operator()(const Tensor<T>& x) const { return group_norm(x, groups_, gamma_, beta_); }

 private:
  Tensor<T> gamma_, beta_;
  std::size_t groups_ = 1;
};

template <class T>
class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParameterStore<T>& store, const std::string& name, std::size_t d)
      : gamma_(store.create(name + ".weight", {d}, Init::kOnes)),
        beta_(store.create(name + ".bias", {d}, Init::kZeros)) {}
  Tensor<T> operator()(const Tensor<T>& x) const { return layer_norm(x, gamma_, beta_); }

 private:
  Tensor<T> gamma_, beta_;
};

// Bidirectional GRU: [N, S, D] -> [N, S, 2 * hidden], forward states first.
template <class T>
class BiGru {
 public:
  BiGru() = default;
  BiGru(ParameterStore<T>& store, const std::string& name, std::size_t in, std::size_t hidden)
      : hidden_(hidden) {
    for (int dir = 0; dir < 2; ++dir) {
      const std::string p = name + (dir == 0 ? ".fwd" : ".bwd");
      w_ih_[dir] = store.create(p + ".w_ih", {3 * hidden, in}, Init::kUniformFanIn, hidden);
      w_hh_[dir] = store.create(p + ".w_hh", {3 * hidden, hidden}, Init::kUniformFanIn, hidden);
      b_ih_[dir] = store.create(p + ".b_ih", {3 * hidden}, Init::kZeros);
      b_hh_[dir] = store.create(p + ".b_hh", {3 * hidden}, Init::kZeros);
    }
  }
  std::size_t hidden() const { return hidden_; }
  Tensor<T> operator()(const Tensor<T>& x) const {
    auto fwd = gru(x, w_ih_[0], w_hh_[0], b_ih_[0], b_hh_[0], false);
    auto bwd = gru(x, w_ih_[1], w_hh_[1], b_ih_[1], b_hh_[1], true);
    return concat<T>({fwd, bwd}, -1);
  }

 private:
  std::size_t hidden_ = 0;
  Tensor<T> w_ih_[2], w_hh_[2], b_ih_[2], b_hh_[2];
};

template <class T>
struct AttentionResult {
  Tensor<T> output;   // [N, S, D]
  Tensor<T> weights;  // [N * heads, S, S], post-softmax, pre-dropout
};

// Multi-head self-attention over x [N, S, D], RoPE applied to queries and
// keys along S when enabled.
template <class T>
class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(ParameterStore<T>& store, const std::string& name, std::size_t d,
                     std::size_t heads, bool use_rope, double dropout, double rope_base = 10000.0)
      : d_(d), heads_(heads), use_rope_(use_rope), dropout_(dropout), rope_base_(rope_base) {
    if (heads == 0 || d % heads != 0) {
      throw ConfigError("attention: model dim " + std::to_string(d) + " not divisible by " +
                        std::to_string(heads) + " heads");
    }
    if (use_rope && (d / heads) % 2 != 0) throw ConfigError("attention: RoPE needs an even head dim");
    q_ = Linear<T>(store, name + ".q", d, d);
    k_ = Linear<T>(store, name + ".k", d, d);
    v_ = Linear<T>(store, name + ".v", d, d);
    o_ = Linear<T>(store, name + ".out", d, d);
  }

  AttentionResult<T> forward(const Tensor<T>& x, const RunMode& mode) const {
    if (x.dim() != 3 || x.shape()[2] != d_) throw ShapeError("attention expects [N, S, D]");
    const std::size_t n = x.shape()[0], s = x.shape()[1], hd = d_ / heads_;
    auto split = [&](const Tensor<T>& t, bool rotate) {
      auto r = permute(reshape(t, {n, s, heads_, hd}), {0, 2, 1, 3});
      if (rotate) r = rope_rotate(r, rope_base_);
      return reshape(r, {n * heads_, s, hd});
    };
    auto q = split(q_(x), use_rope_);
    auto k = split(k_(x), use_rope_);
    auto v = split(v_(x), false);
    auto weights = softmax(scale(bmm(q, k, true), static_cast<T>(1.0 / std::sqrt(static_cast<double>(hd)))));
    auto ctx = bmm(dropout(weights, dropout_, mode.train, mode.rng), v);
    auto merged = reshape(permute(reshape(ctx, {n, heads_, s, hd}), {0, 2, 1, 3}), {n, s, d_});
    return {o_(merged), weights};
  }

  Tensor<T> operator()(const Tensor<T>& x, const RunMode& mode) const { return forward(x, mode).output; }

 private:
  std::size_t d_ = 0, heads_ = 1;
  bool use_rope_ = true;
  double dropout_ = 0.0, rope_base_ = 10000.0;
  Linear<T> q_, k_, v_, o_;
};

// Pre-norm transformer layer: attention then a GELU feed-forward (x4).
template <class T>
class TransformerLayer {
 public:
  TransformerLayer() = default;
  TransformerLayer(ParameterStore<T>& store, const std::string& name, std::size_t d, std::size_t heads,
                   double dropout)
      : norm1_(store, name + ".norm1", d),
        attn_(store, name + ".attn", d, heads, true, dropout),
        norm2_(store, name + ".norm2", d),
        ff1_(store, name + ".ff1", d, 4 * d),
        ff2_(store, name + ".ff2", 4 * d, d),
        dropout_(dropout) {}

  Tensor<T> operator()(const Tensor<T>& x, const RunMode& mode) const {
    auto h = add(x, dropout(attn_(norm1_(x), mode), dropout_, mode.train, mode.rng));
    auto f = ff2_(gelu(ff1_(norm2_(h))));
    return add(h, dropout(f, dropout_, mode.train, mode.rng));
  }

 private:
  LayerNorm<T> norm1_;
  MultiHeadAttention<T> attn_;
  LayerNorm<T> norm2_;
  Linear<T> ff1_, ff2_;
  double dropout_ = 0.0;
};

}  // namespace dttbsr::nn
