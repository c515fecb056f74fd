#pragma once

// GAN training loop: per step one discriminator update on a detached fake,
// then one generator update on the weighted objective. Each step draws its
// randomness from an RNG seeded by (seed, step), so a resumed run replays the
// same batches and dropout masks as an uninterrupted one.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <memory>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "dttbsr/checkpoint.hpp"
#include "dttbsr/config.hpp"
#include "dttbsr/dataset.hpp"
#include "dttbsr/discriminator.hpp"
#include "dttbsr/generator.hpp"
#include "dttbsr/inference.hpp"
#include "dttbsr/losses.hpp"
#include "dttbsr/metrics.hpp"
#include "dttbsr/optim.hpp"

namespace dttbsr {

struct StepRecord {
  std::size_t step = 0;
  double lr = 0.0;
  LossReport losses;
  double d_loss = 0.0;
};

inline nlohmann::json to_json(const StepRecord& r) {
  return {{"step", r.step},         {"lr", r.lr},
          {"mms", r.losses.mms},    {"adv", r.losses.adv},
          {"feat", r.losses.feat},  {"total", r.losses.total},
          {"d_loss", r.d_loss}};
}

inline std::mt19937_64 step_rng(std::uint64_t seed, std::size_t step) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(step), static_cast<std::uint32_t>(std::uint64_t{step} >> 32)};
  return std::mt19937_64(seq);
}

inline nn::Tensor<float> batch_tensor(const std::vector<TrainingPair>& batch, bool mixture) {
  if (batch.empty()) throw ArgumentError("empty training batch");
  const Waveform& first = mixture ? batch.front().mixture : batch.front().target;
  std::vector<float> data;
  data.reserve(batch.size() * first.samples.size());
  for (const auto& pair : batch) {
    const Waveform& w = mixture ? pair.mixture : pair.target;
    if (!w.same_layout(first)) throw ArgumentError("training batch items differ in layout");
    data.insert(data.end(), w.samples.begin(), w.samples.end());
  }
  return nn::Tensor<float>::from_vector({batch.size(), first.channels, first.frames}, std::move(data));
}

class Trainer {
 public:
  explicit Trainer(const TrainConfig& cfg)
      : cfg_(cfg),
        gen_store_(std::make_unique<nn::ParameterStore<float>>(cfg.seed * 2 + 1)),
        disc_store_(std::make_unique<nn::ParameterStore<float>>(cfg.seed * 2 + 2)),
        generator_(std::make_unique<Generator<float>>(*gen_store_, cfg.generator)),
        discriminator_(std::make_unique<Discriminator<float>>(*disc_store_, cfg.discriminator)),
        mel_loss_(with_rate(cfg.mel_loss, cfg.sample_rate)) {
    cfg_.validate();
  }

  static std::unique_ptr<Trainer> from_checkpoint(const Checkpoint& ckpt) {
    auto t = std::make_unique<Trainer>(ckpt.config);
    t->load(ckpt);
    return t;
  }

  const TrainConfig& config() const { return cfg_; }
  std::size_t step() const { return step_; }
  nn::ParameterStore<float>& generator_store() { return *gen_store_; }
  nn::ParameterStore<float>& discriminator_store() { return *disc_store_; }
  const Generator<float>& generator() const { return *generator_; }
  const Discriminator<float>& discriminator() const { return *discriminator_; }

  // Learning-rate hook; constant for now.
  double learning_rate(std::size_t /*step*/) const { return cfg_.lr; }

  StepRecord train_step(const DatasetIndex& index) {
    auto rng = step_rng(cfg_.seed, step_);
    const auto batch = sample_batch(index, cfg_, rng);
    return train_step(batch, rng);
  }

  StepRecord train_step(const std::vector<TrainingPair>& batch, std::mt19937_64& rng) {
    const auto mixture = batch_tensor(batch, true);
    const auto target = batch_tensor(batch, false);
    const double lr = learning_rate(step_);
    const nn::RunMode mode{true, &rng};
    gen_store_->zero_grad();
    disc_store_->zero_grad();

    const auto fake = generator_->forward(mixture, mode);
    StepRecord rec;
    rec.step = step_ + 1;
    rec.lr = lr;
    if (cfg_.adversarial) {
      const auto real_out = discriminator_->forward(target);
      const auto fake_out = discriminator_->forward(fake.detach());
      const auto d_loss = hinge_adv_discriminator(real_out, fake_out);
      rec.d_loss = d_loss.item();
      if (!std::isfinite(rec.d_loss)) fail(rec);
      d_loss.backward();
      adamw_step(*disc_store_, cfg_.adamw, lr);
      disc_store_->zero_grad();
    }

    const auto mms = mel_loss_(fake, target);
    auto adv = nn::Tensor<float>::scalar(0.0f);
    auto feat = nn::Tensor<float>::scalar(0.0f);
    if (cfg_.adversarial) {
      DiscriminatorOutput<float> real_out;
      {
        nn::NoGradGuard no_grad;
        real_out = discriminator_->forward(target);
      }
      const auto fake_out = discriminator_->forward(fake);
      adv = hinge_adv_generator(fake_out);
      feat = feature_matching_loss(real_out, fake_out);
    }
    rec.losses = composite_loss(mms.item(), adv.item(), feat.item(), cfg_.weights);
    if (!std::isfinite(rec.losses.total)) fail(rec);
    composite_objective(mms, adv, feat, cfg_.weights).backward();
    adamw_step(*gen_store_, cfg_.adamw, lr);
    gen_store_->zero_grad();
    disc_store_->zero_grad();
    ++step_;
    return rec;
  }

  Checkpoint snapshot() const {
    Checkpoint ckpt;
    ckpt.step = step_;
    ckpt.config = cfg_;
    append_store(ckpt.tensors, *gen_store_, "generator/");
    append_store(ckpt.tensors, *disc_store_, "discriminator/");
    return ckpt;
  }

  // Restores parameters, optimizer state and step; the model configs must match.
  void load(const Checkpoint& ckpt) {
    if (!(ckpt.config.generator == cfg_.generator)) {
      throw ConfigMismatchError("checkpoint generator config differs from the current config");
    }
    if (!(ckpt.config.discriminator == cfg_.discriminator)) {
      throw ConfigMismatchError("checkpoint discriminator config differs from the current config");
    }
    restore_store(ckpt.tensors, *gen_store_, "generator/");
    restore_store(ckpt.tensors, *disc_store_, "discriminator/");
    step_ = ckpt.step;
  }

 private:
  static MelLossConfig with_rate(MelLossConfig m, int rate) {
    m.sample_rate = rate;
    return m;
  }

  [[noreturn]] void fail(const StepRecord& rec) const {
    std::ostringstream os;
    os << "non-finite loss at step " << rec.step << ": " << to_json(rec).dump();
    throw NonFiniteLossError(os.str());
  }

  TrainConfig cfg_;
  std::unique_ptr<nn::ParameterStore<float>> gen_store_, disc_store_;
  std::unique_ptr<Generator<float>> generator_;
  std::unique_ptr<Discriminator<float>> discriminator_;
  MultiMelLoss<float> mel_loss_;
  std::size_t step_ = 0;
};

inline std::string checkpoint_name(std::size_t step) {
  std::string digits = std::to_string(step);
  return "ckpt_" + std::string(digits.size() < 8 ? 8 - digits.size() : 0, '0') + digits + ".json";
}

struct TrainOptions {
  std::filesystem::path resume_from;  // empty: start fresh
  std::ostream* progress = nullptr;   // one line per step when set
};

// Runs until cfg.total_steps, checkpointing at step 0 (fresh runs), every
// checkpoint_every steps and at the end. Log records go to
// <out_dir>/train_log.ndjson. On a non-finite loss the current state is saved
// as diagnostic_<step>.json before the error propagates.
inline std::vector<std::filesystem::path> train(const TrainConfig& cfg, const DatasetIndex& dataset,
                                                const std::filesystem::path& out_dir, const TrainOptions& opts = {}) {
  cfg.validate();
  std::filesystem::create_directories(out_dir);
  std::unique_ptr<Trainer> trainer;
  if (opts.resume_from.empty()) {
    trainer = std::make_unique<Trainer>(cfg);
  } else {
    trainer = std::make_unique<Trainer>(cfg);
    trainer->load(load_checkpoint(opts.resume_from));
  }
  std::vector<std::filesystem::path> saved;
  auto save = [&] {
    const auto path = out_dir / checkpoint_name(trainer->step());
    save_checkpoint(trainer->snapshot(), path);
    saved.push_back(path);
  };
  if (opts.resume_from.empty()) save();
  std::ofstream log(out_dir / "train_log.ndjson", opts.resume_from.empty() ? std::ios::trunc : std::ios::app);
  if (!log) throw IoError("cannot open training log in " + out_dir.string());
  while (trainer->step() < cfg.total_steps) {
    StepRecord rec;
    try {
      rec = trainer->train_step(dataset);
    } catch (const NonFiniteLossError&) {
      save_checkpoint(trainer->snapshot(), out_dir / ("diagnostic_" + std::to_string(trainer->step()) + ".json"));
      throw;
    }
    log << to_json(rec).dump() << "\n";
    log.flush();
    if (opts.progress) *opts.progress << to_json(rec).dump() << "\n";
    if (trainer->step() % cfg.checkpoint_every == 0 || trainer->step() == cfg.total_steps) save();
  }
  return saved;
}

// Deterministic validation pairs: the first chunk of every song, degraded
// with an RNG seeded from cfg.seed.
inline std::vector<TrainingPair> validation_pairs(const DatasetIndex& index, const TrainConfig& cfg) {
  std::mt19937_64 rng(cfg.seed);
  std::vector<TrainingPair> pairs;
  for (const Song& song : index.songs) {
    const std::size_t frames = std::min(cfg.chunk_frames(), song.frames);
    auto [stems, target_index] = read_song_chunk(song, index.target_stem, 0, frames);
    pairs.push_back(build_training_pair(stems, target_index, cfg.effects, rng));
  }
  return pairs;
}

struct CheckpointScore {
  std::filesystem::path path;
  std::size_t step = 0;
  double mmsnr = 0.0;
};

// Scores every checkpoint manifest in `dir` on the validation pairs and
// returns them sorted by step; select_checkpoint picks the argmax, preferring
// the later step on ties.
inline std::vector<CheckpointScore> score_checkpoints(const std::filesystem::path& dir, const DatasetIndex& validation,
                                                      const TrainConfig& cfg) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw IoError("checkpoint directory not found: " + dir.string());
  std::vector<fs::path> manifests;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto name = e.path().filename().string();
    if (e.is_regular_file() && name.rfind("ckpt_", 0) == 0 && e.path().extension() == ".json") manifests.push_back(e.path());
  }
  if (manifests.empty()) throw EmptyInputError("no checkpoints in " + dir.string());
  const auto pairs = validation_pairs(validation, cfg);
  MmsnrConfig mcfg;
  mcfg.windows = cfg.mel_loss.windows;
  mcfg.mel_bins = cfg.mel_loss.mel_bins;
  std::vector<CheckpointScore> scores;
  for (const auto& path : manifests) {
    const Checkpoint ckpt = load_checkpoint(path);
    const RestorationModel model(ckpt);
    double sum = 0.0;
    for (const auto& pair : pairs) sum += mmsnr(model.restore(pair.mixture), pair.target, mcfg);
    scores.push_back({path, ckpt.step, sum / static_cast<double>(pairs.size())});
  }
  std::sort(scores.begin(), scores.end(), [](const auto& a, const auto& b) { return a.step < b.step; });
  return scores;
}

inline std::filesystem::path select_checkpoint(const std::filesystem::path& dir, const DatasetIndex& validation,
                                               const TrainConfig& cfg) {
  const auto scores = score_checkpoints(dir, validation, cfg);
  const CheckpointScore* best = &scores.front();
  for (const auto& s : scores) {
    if (s.mmsnr >= best->mmsnr) best = &s;
  }
  return best->path;
}

}  // namespace dttbsr
