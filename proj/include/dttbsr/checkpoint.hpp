#pragma once

// Checkpoint = JSON manifest + raw little-endian float32 payload. The
// manifest lists every tensor (name, role, shape, byte offset, byte length),
// the training step, the config snapshot and a CRC-32 of the payload.

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <zlib.h>

#include "json.hpp"

#include "dttbsr/config.hpp"
#include "dttbsr/nn.hpp"

namespace dttbsr {

inline constexpr int kCheckpointFormatVersion = 1;

struct NamedTensor {
  std::string name;
  std::string role;  // "param" or "state"
  nn::Shape shape;
  std::vector<float> values;
};

struct Checkpoint {
  std::size_t step = 0;
  TrainConfig config;
  std::vector<NamedTensor> tensors;
};

inline std::filesystem::path checkpoint_payload_path(const std::filesystem::path& manifest) {
  auto p = manifest;
  p.replace_extension(".bin");
  return p;
}

namespace checkpoint_detail {

inline std::uint32_t crc32_of(const std::vector<unsigned char>& bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  std::size_t offset = 0;
  while (offset < bytes.size()) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes.size() - offset, 1u << 30));
    crc = ::crc32(crc, bytes.data() + offset, chunk);
    offset += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

inline void put_f32_le(unsigned char* dst, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  for (int i = 0; i < 4; ++i) dst[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xffu);
}

inline float get_f32_le(const unsigned char* src) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(src[i]) << (8 * i);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

}  // namespace checkpoint_detail

inline void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& manifest_path) {
  using namespace checkpoint_detail;
  std::size_t total = 0;
  for (const auto& t : ckpt.tensors) {
    if (nn::numel(t.shape) != t.values.size()) throw ShapeError("checkpoint tensor " + t.name + " size mismatch");
    total += t.values.size() * 4;
  }
  std::vector<unsigned char> payload(total);
  nlohmann::json entries = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& t : ckpt.tensors) {
    for (std::size_t i = 0; i < t.values.size(); ++i) put_f32_le(payload.data() + offset + 4 * i, t.values[i]);
    entries.push_back({{"name", t.name}, {"role", t.role}, {"shape", t.shape}, {"offset", offset},
                       {"bytes", t.values.size() * 4}});
    offset += t.values.size() * 4;
  }
  const auto payload_path = checkpoint_payload_path(manifest_path);
  nlohmann::json manifest{{"format_version", kCheckpointFormatVersion},
                          {"step", ckpt.step},
                          {"config", to_json(ckpt.config)},
                          {"payload", payload_path.filename().string()},
                          {"payload_bytes", payload.size()},
                          {"crc32", crc32_of(payload)},
                          {"tensors", entries}};
  {
    std::ofstream out(payload_path, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint payload " + payload_path.string());
    out.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
    if (!out) throw IoError("failed writing checkpoint payload " + payload_path.string());
  }
  std::ofstream out(manifest_path);
  if (!out) throw IoError("cannot write checkpoint manifest " + manifest_path.string());
  out << manifest.dump(2) << "\n";
  if (!out) throw IoError("failed writing checkpoint manifest " + manifest_path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& manifest_path) {
  using namespace checkpoint_detail;
  std::ifstream in(manifest_path);
  if (!in) throw IoError("cannot open checkpoint " + manifest_path.string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw CorruptFileError("checkpoint manifest " + manifest_path.string() + " is not valid JSON: " + e.what());
  }
  Checkpoint ckpt;
  std::vector<unsigned char> payload;
  try {
    const int version = manifest.at("format_version").get<int>();
    if (version != kCheckpointFormatVersion) {
      throw VersionError("unsupported checkpoint format version " + std::to_string(version));
    }
    const auto payload_path = manifest_path.parent_path() / manifest.at("payload").get<std::string>();
    std::ifstream bin(payload_path, std::ios::binary);
    if (!bin) throw IoError("cannot open checkpoint payload " + payload_path.string());
    payload.assign(std::istreambuf_iterator<char>(bin), std::istreambuf_iterator<char>());
    if (payload.size() != manifest.at("payload_bytes").get<std::size_t>()) {
      throw ChecksumError("checkpoint payload size does not match the manifest");
    }
    if (crc32_of(payload) != manifest.at("crc32").get<std::uint32_t>()) {
      throw ChecksumError("checkpoint payload checksum mismatch in " + payload_path.string());
    }
    ckpt.step = manifest.at("step").get<std::size_t>();
    ckpt.config = train_config_from_json_unchecked(manifest.at("config"));
    for (const auto& e : manifest.at("tensors")) {
      NamedTensor t;
      t.name = e.at("name").get<std::string>();
      t.role = e.at("role").get<std::string>();
      t.shape = e.at("shape").get<nn::Shape>();
      const auto offset = e.at("offset").get<std::size_t>();
      const auto bytes = e.at("bytes").get<std::size_t>();
      if (bytes != nn::numel(t.shape) * 4 || offset > payload.size() || bytes > payload.size() - offset) {
        throw CorruptFileError("checkpoint entry " + t.name + " does not map into the payload");
      }
      t.values.resize(bytes / 4);
      for (std::size_t i = 0; i < t.values.size(); ++i) t.values[i] = get_f32_le(payload.data() + offset + 4 * i);
      ckpt.tensors.push_back(std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    throw CorruptFileError("checkpoint manifest " + manifest_path.string() + " is malformed: " + e.what());
  }
  return ckpt;
}

// Snapshot of a store's parameters and states with names prefixed by `scope`.
template <class T>
void append_store(std::vector<NamedTensor>& out, const nn::ParameterStore<T>& store, const std::string& scope) {
  for (const auto& [name, t] : store.parameters()) {
    out.push_back({scope + name, "param", t.shape(), std::vector<float>(t.data().begin(), t.data().end())});
  }
  for (const auto& [name, t] : store.states()) {
    out.push_back({scope + name, "state", t.shape(), std::vector<float>(t.data().begin(), t.data().end())});
  }
}

// Copies the tensors under `scope` into `store`: every parameter must be
// present with a matching shape; states are created as needed.
template <class T>
void restore_store(const std::vector<NamedTensor>& tensors, nn::ParameterStore<T>& store, const std::string& scope) {
  std::size_t params = 0;
  for (const auto& t : tensors) {
    if (t.name.rfind(scope, 0) != 0) continue;
    const std::string name = t.name.substr(scope.size());
    nn::Tensor<T>* dst = nullptr;
    if (t.role == "param") {
      if (!store.contains(name)) throw ConfigMismatchError("checkpoint parameter " + t.name + " unknown to the model");
      dst = &store.get(name);
      ++params;
    } else {
      dst = &store.state(name, t.shape);
    }
    if (dst->shape() != t.shape) throw ConfigMismatchError("checkpoint tensor " + t.name + " has a different shape");
    auto data = dst->mutable_data();
    for (std::size_t i = 0; i < t.values.size(); ++i) data[i] = static_cast<T>(t.values[i]);
  }
  if (params != store.parameters().size()) {
    throw ConfigMismatchError("checkpoint is missing parameters for scope '" + scope + "'");
  }
}

}  // namespace dttbsr
