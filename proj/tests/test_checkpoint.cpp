#include <gtest/gtest.h>

#include <cstring>
#include <fstream>
#include <limits>

#include "test_util.hpp"

using namespace dttbsr;

namespace {

Checkpoint sample_checkpoint() {
  Checkpoint c;
  c.step = 1234;
  c.config = test::tiny_train_config();
  NamedTensor a{"generator/w", "param", {2, 3}, {}};
  std::mt19937 rng(1);
  std::uniform_real_distribution<float> u(-5.0f, 5.0f);
  for (int i = 0; i < 6; ++i) a.values.push_back(u(rng));
  a.values[0] = std::numeric_limits<float>::denorm_min();
  a.values[1] = -0.0f;
  a.values[2] = std::numeric_limits<float>::max();
  c.tensors.push_back(a);
  c.tensors.push_back({"generator/adamw.t", "state", {1}, {17.0f}});
  c.tensors.push_back({"discriminator/empty", "param", {0}, {}});
  return c;
}

std::vector<unsigned char> read_bytes(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

void write_bytes(const std::filesystem::path& p, const std::vector<unsigned char>& b) {
  std::ofstream f(p, std::ios::binary);
  f.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

bool bit_equal(const std::vector<float>& a, const std::vector<float>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

}  // namespace

TEST(Checkpoint, RoundTripIsBitIdentical) {
  test::TempDir dir("ckpt");
  const Checkpoint c = sample_checkpoint();
  save_checkpoint(c, dir.path() / "ckpt_00001234.json");
  EXPECT_TRUE(std::filesystem::exists(dir.path() / "ckpt_00001234.bin"));
  const Checkpoint back = load_checkpoint(dir.path() / "ckpt_00001234.json");
  EXPECT_EQ(back.step, 1234u);
  EXPECT_EQ(to_json(back.config), to_json(c.config));
  ASSERT_EQ(back.tensors.size(), c.tensors.size());
  for (std::size_t i = 0; i < c.tensors.size(); ++i) {
    EXPECT_EQ(back.tensors[i].name, c.tensors[i].name);
    EXPECT_EQ(back.tensors[i].role, c.tensors[i].role);
    EXPECT_EQ(back.tensors[i].shape, c.tensors[i].shape);
    EXPECT_TRUE(bit_equal(back.tensors[i].values, c.tensors[i].values)) << c.tensors[i].name;
  }
}

TEST(Checkpoint, PayloadIsLittleEndianFloat32InManifestOrder) {
  test::TempDir dir("ckpt");
  Checkpoint c;
  c.config = test::tiny_train_config();
  c.tensors.push_back({"a", "param", {2}, {1.0f, -2.0f}});
  c.tensors.push_back({"b", "state", {1}, {0.5f}});
  save_checkpoint(c, dir.path() / "c.json");
  const auto bytes = read_bytes(dir.path() / "c.bin");
  const std::vector<unsigned char> expected = {0x00, 0x00, 0x80, 0x3f, 0x00, 0x00, 0x00, 0xc0, 0x00, 0x00, 0x00, 0x3f};
  EXPECT_EQ(bytes, expected);
  std::ifstream in(dir.path() / "c.json");
  const auto manifest = nlohmann::json::parse(in);
  EXPECT_EQ(manifest.at("format_version").get<int>(), kCheckpointFormatVersion);
  EXPECT_EQ(manifest.at("tensors")[1].at("offset").get<std::size_t>(), 8u);
  EXPECT_EQ(manifest.at("tensors")[1].at("bytes").get<std::size_t>(), 4u);
}

TEST(Checkpoint, FlippedPayloadByteIsChecksumError) {
  test::TempDir dir("ckpt");
  save_checkpoint(sample_checkpoint(), dir.path() / "c.json");
  auto bytes = read_bytes(dir.path() / "c.bin");
  for (std::size_t pos : {std::size_t{0}, bytes.size() / 2, bytes.size() - 1}) {
    auto corrupt = bytes;
    corrupt[pos] ^= 0x01;
    write_bytes(dir.path() / "c.bin", corrupt);
    EXPECT_THROW(load_checkpoint(dir.path() / "c.json"), ChecksumError) << "byte " << pos;
  }
  bytes.pop_back();
  write_bytes(dir.path() / "c.bin", bytes);
  EXPECT_THROW(load_checkpoint(dir.path() / "c.json"), ChecksumError);
}

TEST(Checkpoint, ManifestProblemsAreReported) {
  test::TempDir dir("ckpt");
  save_checkpoint(sample_checkpoint(), dir.path() / "c.json");
  std::ifstream in(dir.path() / "c.json");
  const auto manifest = nlohmann::json::parse(in);
  in.close();

  auto rewrite = [&](const nlohmann::json& j) { std::ofstream(dir.path() / "c.json") << j.dump(); };
  auto m = manifest;
  m["format_version"] = 99;
  rewrite(m);
  EXPECT_THROW(load_checkpoint(dir.path() / "c.json"), VersionError);

  m = manifest;
  m["tensors"][0]["offset"] = 1000;
  rewrite(m);
  EXPECT_THROW(load_checkpoint(dir.path() / "c.json"), CorruptFileError);

  m = manifest;
  m.erase("step");
  rewrite(m);
  EXPECT_THROW(load_checkpoint(dir.path() / "c.json"), CorruptFileError);

  std::ofstream(dir.path() / "c.json") << "{ not json";
  EXPECT_THROW(load_checkpoint(dir.path() / "c.json"), CorruptFileError);
  EXPECT_THROW(load_checkpoint(dir.path() / "missing.json"), IoError);
}

TEST(Checkpoint, StoreRoundTripRestoresParametersAndStates) {
  nn::ParameterStore<float> a(3), b(4);
  for (auto* s : {&a, &b}) {
    s->create("w", {3, 2}, nn::Init::kUniformFanIn, 2);
    s->create("bias", {3}, nn::Init::kZeros);
  }
  a.state("adamw.t", {1}).values()[0] = 9.0f;
  std::vector<NamedTensor> tensors;
  append_store(tensors, a, "generator/");
  restore_store(tensors, b, "generator/");
  EXPECT_EQ(b.get("w").values(), a.get("w").values());
  EXPECT_EQ(b.state("adamw.t", {1}).values()[0], 9.0f);

  nn::ParameterStore<float> other;
  other.create("w", {2, 3}, nn::Init::kZeros);
  other.create("bias", {3}, nn::Init::kZeros);
  EXPECT_THROW(restore_store(tensors, other, "generator/"), ConfigMismatchError);
  nn::ParameterStore<float> extra;
  extra.create("w", {3, 2}, nn::Init::kZeros);
  extra.create("bias", {3}, nn::Init::kZeros);
  extra.create("more", {1}, nn::Init::kZeros);
  EXPECT_THROW(restore_store(tensors, extra, "generator/"), ConfigMismatchError);
}

TEST(Checkpoint, DifferentGeneratorConfigIsConfigMismatch) {
  const TrainConfig cfg = test::tiny_train_config();
  Trainer trainer(cfg);
  Checkpoint snap = trainer.snapshot();
  snap.config.generator.base_dims = 4;
  EXPECT_THROW(trainer.load(snap), ConfigMismatchError);
  snap = trainer.snapshot();
  snap.config.discriminator.conv_channels = {4, 4, 4, 8};
  EXPECT_THROW(trainer.load(snap), ConfigMismatchError);
  EXPECT_THROW(RestorationModel{[&] {
                 Checkpoint s = trainer.snapshot();
                 s.config.generator.base_dims = 4;
                 return s;
               }()},
               ConfigMismatchError);
}
