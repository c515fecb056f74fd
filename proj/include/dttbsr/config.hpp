#pragma once

// Training configuration, its JSON form, and dotted key=value overrides.
// Config files are JSON objects with sections "train", "generator",
// "discriminator", "loss" and "augment"; any subset of keys may be given and
// unknown keys are rejected.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "dttbsr/augment.hpp"
#include "dttbsr/discriminator.hpp"
#include "dttbsr/errors.hpp"
#include "dttbsr/generator.hpp"
#include "dttbsr/losses.hpp"
#include "dttbsr/optim.hpp"

namespace dttbsr {

inline const std::vector<std::string>& stem_labels() {
  static const std::vector<std::string> labels{"vocals", "guitar", "keyboard", "synth",
                                               "bass",   "drums",  "percussion", "orchestra"};
  return labels;
}

inline bool is_stem_label(const std::string& s) {
  for (const auto& l : stem_labels()) {
    if (l == s) return true;
  }
  return false;
}

struct TrainConfig {
  std::string target_stem = "vocals";
  double chunk_seconds = 6.0;
  std::size_t batch_size = 2;
  std::size_t total_steps = 1000000;
  double lr = 0.002;
  AdamWConfig adamw;
  std::size_t checkpoint_every = 10000;
  std::uint64_t seed = 0;
  int sample_rate = 44100;
  bool adversarial = true;
  GeneratorConfig generator;
  DiscriminatorConfig discriminator;
  LossWeights weights;
  MelLossConfig mel_loss;
  EffectChainSpec effects;

  std::size_t chunk_frames() const { return static_cast<std::size_t>(std::llround(chunk_seconds * sample_rate)); }

  void validate() const {
    if (!is_stem_label(target_stem)) throw ConfigError("unknown target stem '" + target_stem + "'");
    if (!(chunk_seconds > 0.0)) throw ConfigError("chunk_seconds must be positive");
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (!(lr > 0.0)) throw ConfigError("lr must be positive");
    if (checkpoint_every == 0) throw ConfigError("checkpoint_every must be positive");
    if (sample_rate <= 0) throw ConfigError("sample_rate must be positive");
    adamw.validate();
    generator.validate();
    discriminator.validate();
    weights.validate();
    mel_loss.validate();
    effects.validate();
    if (discriminator.channels != generator.channels) {
      throw ConfigError("generator and discriminator channel counts differ");
    }
    const std::size_t frames = chunk_frames();
    if (frames < generator.n_fft) throw ConfigError("chunk shorter than the generator n_fft");
    if (adversarial && frames < discriminator.max_window()) {
      throw ConfigError("chunk shorter than the largest discriminator window");
    }
    for (std::size_t w : mel_loss.windows) {
      if (frames <= w / 2) throw ConfigError("chunk too short for mel loss window " + std::to_string(w));
    }
  }
};

// JSON conversions. Field names mirror the struct members.

inline nlohmann::json to_json(const GeneratorConfig& g) {
  return {{"n_blocks", g.n_blocks},
          {"base_dims", g.base_dims},
          {"tfc_tdf_kernel", {g.tfc_tdf_kernel.first, g.tfc_tdf_kernel.second}},
          {"dualpath_layers", g.dualpath_layers},
          {"dualpath_heads", g.dualpath_heads},
          {"rope_repeats", g.rope_repeats},
          {"rope_heads", g.rope_heads},
          {"rope_time_depth", g.rope_time_depth},
          {"rope_freq_depth", g.rope_freq_depth},
          {"dropout", g.dropout},
          {"n_fft", g.n_fft},
          {"hop_length", g.hop_length},
          {"channels", g.channels},
          {"tdf_reduction", g.tdf_reduction},
          {"norm_groups", g.norm_groups}};
}

inline void from_json(const nlohmann::json& j, GeneratorConfig& g) {
  g.n_blocks = j.at("n_blocks").get<std::size_t>();
  g.base_dims = j.at("base_dims").get<std::size_t>();
  const auto k = j.at("tfc_tdf_kernel").get<std::vector<std::size_t>>();
  if (k.size() != 2) throw ConfigError("generator.tfc_tdf_kernel must have two entries");
  g.tfc_tdf_kernel = {k[0], k[1]};
  g.dualpath_layers = j.at("dualpath_layers").get<std::size_t>();
  g.dualpath_heads = j.at("dualpath_heads").get<std::size_t>();
  g.rope_repeats = j.at("rope_repeats").get<std::size_t>();
  g.rope_heads = j.at("rope_heads").get<std::size_t>();
  g.rope_time_depth = j.at("rope_time_depth").get<std::size_t>();
  g.rope_freq_depth = j.at("rope_freq_depth").get<std::size_t>();
  g.dropout = j.at("dropout").get<double>();
  g.n_fft = j.at("n_fft").get<std::size_t>();
  g.hop_length = j.at("hop_length").get<std::size_t>();
  g.channels = j.at("channels").get<std::size_t>();
  g.tdf_reduction = j.at("tdf_reduction").get<std::size_t>();
  g.norm_groups = j.at("norm_groups").get<std::size_t>();
}

inline nlohmann::json to_json(const DiscriminatorConfig& d) {
  return {{"stft_windows", d.stft_windows},
          {"conv_channels", d.conv_channels},
          {"leaky_slope", d.leaky_slope},
          {"channels", d.channels}};
}

inline void from_json(const nlohmann::json& j, DiscriminatorConfig& d) {
  d.stft_windows = j.at("stft_windows").get<std::vector<std::size_t>>();
  d.conv_channels = j.at("conv_channels").get<std::vector<std::size_t>>();
  d.leaky_slope = j.at("leaky_slope").get<double>();
  d.channels = j.at("channels").get<std::size_t>();
}

inline nlohmann::json to_json(const EffectChainSpec& e) {
  return {{"compressor",
           {{"threshold_lo", e.compressor.threshold_lo},
            {"threshold_hi", e.compressor.threshold_hi},
            {"ratio_lo", e.compressor.ratio_lo},
            {"ratio_hi", e.compressor.ratio_hi},
            {"attack_ms", e.compressor.attack_ms},
            {"release_ms", e.compressor.release_ms},
            {"makeup_db", e.compressor.makeup_db}}},
          {"limiter",
           {{"ceiling_db", e.limiter.ceiling_db},
            {"lookahead_ms", e.limiter.lookahead_ms},
            {"release_ms", e.limiter.release_ms}}},
          {"distortion", {{"drive_lo", e.distortion.drive_lo}, {"drive_hi", e.distortion.drive_hi}}},
          {"reverb",
           {{"ir_seconds", e.reverb.ir_seconds},
            {"decay_lo", e.reverb.decay_lo},
            {"decay_hi", e.reverb.decay_hi},
            {"wet_lo", e.reverb.wet_lo},
            {"wet_hi", e.reverb.wet_hi}}},
          {"resample", {{"factor_lo", e.resample.factor_lo}, {"factor_hi", e.resample.factor_hi}}},
          {"probability",
           {{"compressor", e.probability.compressor},
            {"limiter", e.probability.limiter},
            {"distortion", e.probability.distortion},
            {"reverb", e.probability.reverb},
            {"resample", e.probability.resample}}},
          {"output_peak_db", e.output_peak_db},
          {"seed", e.seed}};
}

inline void from_json(const nlohmann::json& j, EffectChainSpec& e) {
  const auto& c = j.at("compressor");
  e.compressor = {c.at("threshold_lo").get<double>(), c.at("threshold_hi").get<double>(),
                  c.at("ratio_lo").get<double>(),     c.at("ratio_hi").get<double>(),
                  c.at("attack_ms").get<double>(),    c.at("release_ms").get<double>(),
                  c.at("makeup_db").get<double>()};
  const auto& l = j.at("limiter");
  e.limiter = {l.at("ceiling_db").get<double>(), l.at("lookahead_ms").get<double>(), l.at("release_ms").get<double>()};
  const auto& d = j.at("distortion");
  e.distortion = {d.at("drive_lo").get<double>(), d.at("drive_hi").get<double>()};
  const auto& r = j.at("reverb");
  e.reverb = {r.at("ir_seconds").get<double>(), r.at("decay_lo").get<double>(), r.at("decay_hi").get<double>(),
              r.at("wet_lo").get<double>(), r.at("wet_hi").get<double>()};
  const auto& s = j.at("resample");
  e.resample = {s.at("factor_lo").get<double>(), s.at("factor_hi").get<double>()};
  const auto& p = j.at("probability");
  e.probability = {p.at("compressor").get<double>(), p.at("limiter").get<double>(), p.at("distortion").get<double>(),
                   p.at("reverb").get<double>(), p.at("resample").get<double>()};
  e.output_peak_db = j.at("output_peak_db").get<double>();
  e.seed = j.at("seed").get<std::uint64_t>();
}

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"train",
           {{"target_stem", c.target_stem},
            {"chunk_seconds", c.chunk_seconds},
            {"batch_size", c.batch_size},
            {"total_steps", c.total_steps},
            {"lr", c.lr},
            {"beta1", c.adamw.beta1},
            {"beta2", c.adamw.beta2},
            {"eps", c.adamw.eps},
            {"weight_decay", c.adamw.weight_decay},
            {"checkpoint_every", c.checkpoint_every},
            {"seed", c.seed},
            {"sample_rate", c.sample_rate},
            {"adversarial", c.adversarial}}},
          {"generator", to_json(c.generator)},
          {"discriminator", to_json(c.discriminator)},
          {"loss",
           {{"lambda_mms", c.weights.lambda_mms},
            {"lambda_adv", c.weights.lambda_adv},
            {"lambda_feat", c.weights.lambda_feat},
            {"mel_windows", c.mel_loss.windows},
            {"mel_bins", c.mel_loss.mel_bins},
            {"log_magnitude", c.mel_loss.log_magnitude},
            {"log_eps", c.mel_loss.log_eps}}},
          {"augment", to_json(c.effects)}};
}

inline TrainConfig train_config_from_json_unchecked(const nlohmann::json& j) {
  try {
    TrainConfig c;
    const auto& t = j.at("train");
    c.target_stem = t.at("target_stem").get<std::string>();
    c.chunk_seconds = t.at("chunk_seconds").get<double>();
    c.batch_size = t.at("batch_size").get<std::size_t>();
    c.total_steps = t.at("total_steps").get<std::size_t>();
    c.lr = t.at("lr").get<double>();
    c.adamw.beta1 = t.at("beta1").get<double>();
    c.adamw.beta2 = t.at("beta2").get<double>();
    c.adamw.eps = t.at("eps").get<double>();
    c.adamw.weight_decay = t.at("weight_decay").get<double>();
    c.checkpoint_every = t.at("checkpoint_every").get<std::size_t>();
    c.seed = t.at("seed").get<std::uint64_t>();
    c.sample_rate = t.at("sample_rate").get<int>();
    c.adversarial = t.at("adversarial").get<bool>();
    from_json(j.at("generator"), c.generator);
    from_json(j.at("discriminator"), c.discriminator);
    const auto& l = j.at("loss");
    c.weights = {l.at("lambda_mms").get<double>(), l.at("lambda_adv").get<double>(), l.at("lambda_feat").get<double>()};
    c.mel_loss.windows = l.at("mel_windows").get<std::vector<std::size_t>>();
    c.mel_loss.mel_bins = l.at("mel_bins").get<std::vector<std::size_t>>();
    c.mel_loss.log_magnitude = l.at("log_magnitude").get<bool>();
    c.mel_loss.log_eps = l.at("log_eps").get<double>();
    c.mel_loss.sample_rate = c.sample_rate;
    from_json(j.at("augment"), c.effects);
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid config: ") + e.what());
  }
}

namespace config_detail {

inline bool compatible(const nlohmann::json& reference, const nlohmann::json& value) {
  if (reference.is_number_unsigned()) return value.is_number_unsigned() || (value.is_number_integer() && value.get<long long>() >= 0);
  if (reference.is_number_integer()) return value.is_number_integer();
  if (reference.is_number_float()) return value.is_number();
  if (reference.is_array()) {
    if (!value.is_array()) return false;
    if (reference.empty()) return true;
    for (const auto& v : value) {
      if (!compatible(reference.front(), v)) return false;
    }
    return true;
  }
  return reference.type() == value.type();
}

// Copies `patch` into `base`, rejecting keys absent from base and values
// whose type differs from the default's.
inline void merge_strict(nlohmann::json& base, const nlohmann::json& patch, const std::string& path) {
  if (!patch.is_object()) throw ConfigError("config section '" + path + "' must be an object");
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    const std::string key = path.empty() ? it.key() : path + "." + it.key();
    if (!base.contains(it.key())) throw ConfigError("unknown config key '" + key + "'");
    nlohmann::json& slot = base[it.key()];
    if (slot.is_object()) {
      merge_strict(slot, it.value(), key);
    } else {
      if (!compatible(slot, it.value())) {
        throw ConfigError("config key '" + key + "' expects " + std::string(slot.type_name()) + ", got " +
                          it.value().dump());
      }
      slot = it.value();
    }
  }
}

}  // namespace config_detail

// Defaults overlaid with `patch`; the result is validated.
inline TrainConfig train_config_from_json(const nlohmann::json& patch, const TrainConfig& defaults = {}) {
  nlohmann::json merged = to_json(defaults);
  config_detail::merge_strict(merged, patch, "");
  TrainConfig c = train_config_from_json_unchecked(merged);
  c.validate();
  return c;
}

inline TrainConfig load_train_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
  return train_config_from_json(j);
}

inline void save_train_config(const TrainConfig& c, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write config file " + path.string());
  out << to_json(c).dump(2) << "\n";
}

// Applies "section.key=value" overrides. Values parse as JSON when possible
// and fall back to a bare string; the type must match the existing entry.
inline TrainConfig apply_overrides(const TrainConfig& c, const std::vector<std::string>& overrides) {
  nlohmann::json j = to_json(c);
  for (const std::string& ov : overrides) {
    const auto eq = ov.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + ov + "' is not of the form key=value");
    const std::string key = ov.substr(0, eq), text = ov.substr(eq + 1);
    nlohmann::json value;
    try {
      value = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error&) {
      value = text;
    }
    nlohmann::json patch = value;
    std::size_t end = key.size();
    while (true) {
      const auto dot = key.rfind('.', end - 1);
      const std::string part = key.substr(dot == std::string::npos ? 0 : dot + 1,
                                          end - (dot == std::string::npos ? 0 : dot + 1));
      if (part.empty()) throw ConfigError("override key '" + key + "' has an empty component");
      patch = nlohmann::json{{part, patch}};
      if (dot == std::string::npos) break;
      end = dot;
    }
    config_detail::merge_strict(j, patch, "");
  }
  TrainConfig out = train_config_from_json_unchecked(j);
  out.validate();
  return out;
}

}  // namespace dttbsr
