#include <gtest/gtest.h>

#include <fstream>

#include "test_util.hpp"

using namespace dttbsr;

TEST(TrainConfig, DefaultsFollowPublishedSetup) {
  const TrainConfig c;
  EXPECT_EQ(c.lr, 0.002);
  EXPECT_EQ(c.batch_size, 2u);
  EXPECT_EQ(c.total_steps, 1000000u);
  EXPECT_EQ(c.weights.lambda_mms, 45.0);
  EXPECT_EQ(c.weights.lambda_adv, 2.0);
  EXPECT_EQ(c.weights.lambda_feat, 4.0);
  EXPECT_EQ(c.adamw.beta1, 0.9);
  EXPECT_EQ(c.adamw.beta2, 0.999);
  EXPECT_EQ(c.adamw.weight_decay, 0.01);
  EXPECT_EQ(c.chunk_seconds, 6.0);
  EXPECT_NO_THROW(c.validate());
}

TEST(TrainConfig, JsonRoundTrip) {
  TrainConfig c = test::tiny_train_config();
  c.effects.probability.reverb = 0.25;
  c.generator.tfc_tdf_kernel = {5, 3};
  const TrainConfig back = train_config_from_json(to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));
  EXPECT_EQ(back.generator, c.generator);
  EXPECT_EQ(back.discriminator, c.discriminator);
}

TEST(TrainConfig, PartialPatchKeepsDefaults) {
  const TrainConfig c = train_config_from_json(nlohmann::json::parse(R"({"train": {"lr": 0.0005, "target_stem": "drums"}})"));
  EXPECT_EQ(c.lr, 0.0005);
  EXPECT_EQ(c.target_stem, "drums");
  EXPECT_EQ(c.batch_size, 2u);
  EXPECT_EQ(c.generator.base_dims, 64u);
}

TEST(TrainConfig, UnknownKeysAreRejected) {
  EXPECT_THROW(train_config_from_json(nlohmann::json::parse(R"({"train": {"learning_rate": 0.1}})")), ConfigError);
  EXPECT_THROW(train_config_from_json(nlohmann::json::parse(R"({"optimizer": {}})")), ConfigError);
  EXPECT_THROW(train_config_from_json(nlohmann::json::parse(R"({"train": 3})")), ConfigError);
}

TEST(TrainConfig, TypesAreChecked) {
  EXPECT_THROW(train_config_from_json(nlohmann::json::parse(R"({"train": {"lr": "fast"}})")), ConfigError);
  EXPECT_THROW(train_config_from_json(nlohmann::json::parse(R"({"train": {"batch_size": -1}})")), ConfigError);
  EXPECT_THROW(train_config_from_json(nlohmann::json::parse(R"({"train": {"batch_size": 1.5}})")), ConfigError);
  EXPECT_THROW(train_config_from_json(nlohmann::json::parse(R"({"discriminator": {"stft_windows": ["a"]}})")),
               ConfigError);
  // Integers are accepted where a real is expected.
  EXPECT_EQ(train_config_from_json(nlohmann::json::parse(R"({"train": {"chunk_seconds": 4}})")).chunk_seconds, 4.0);
}

TEST(TrainConfig, SemanticValidation) {
  EXPECT_THROW(train_config_from_json(nlohmann::json::parse(R"({"train": {"target_stem": "kazoo"}})")), ConfigError);
  EXPECT_THROW(train_config_from_json(nlohmann::json::parse(R"({"train": {"lr": 0.0}})")), ConfigError);
  EXPECT_THROW(train_config_from_json(nlohmann::json::parse(R"({"train": {"chunk_seconds": 0.01}})")), ConfigError);
  EXPECT_THROW(train_config_from_json(nlohmann::json::parse(R"({"generator": {"channels": 1}})")), ConfigError);
}

TEST(TrainConfig, DottedOverrides) {
  const TrainConfig base = test::tiny_train_config();
  const TrainConfig c = apply_overrides(
      base, {"train.lr=0.001", "generator.base_dims=4", "train.target_stem=drums", "augment.probability.reverb=0"});
  EXPECT_EQ(c.lr, 0.001);
  EXPECT_EQ(c.generator.base_dims, 4u);
  EXPECT_EQ(c.target_stem, "drums");
  EXPECT_EQ(c.effects.probability.reverb, 0.0);
  EXPECT_EQ(c.batch_size, base.batch_size);
  const TrainConfig lists = apply_overrides(base, {"discriminator.stft_windows=[256,64]"});
  EXPECT_EQ(lists.discriminator.stft_windows, (std::vector<std::size_t>{256, 64}));
}

TEST(TrainConfig, BadOverridesAreRejected) {
  const TrainConfig base = test::tiny_train_config();
  EXPECT_THROW(apply_overrides(base, {"train.lr"}), ConfigError);
  EXPECT_THROW(apply_overrides(base, {"=3"}), ConfigError);
  EXPECT_THROW(apply_overrides(base, {"train.nope=3"}), ConfigError);
  EXPECT_THROW(apply_overrides(base, {"train..lr=3"}), ConfigError);
  EXPECT_THROW(apply_overrides(base, {"train.batch_size=many"}), ConfigError);
  EXPECT_THROW(apply_overrides(base, {"train.lr=-1"}), ConfigError);
}

TEST(TrainConfig, FileRoundTripAndErrors) {
  test::TempDir dir("config");
  const TrainConfig c = test::tiny_train_config();
  save_train_config(c, dir.path() / "c.json");
  EXPECT_EQ(to_json(load_train_config(dir.path() / "c.json")), to_json(c));
  std::ofstream(dir.path() / "bad.json") << "{ nope";
  EXPECT_THROW(load_train_config(dir.path() / "bad.json"), ConfigError);
  EXPECT_THROW(load_train_config(dir.path() / "absent.json"), ConfigError);
}
