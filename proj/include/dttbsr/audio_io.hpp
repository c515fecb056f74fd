#pragma once

// RIFF/WAVE reading and writing plus the in-memory Waveform type.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "dttbsr/errors.hpp"

namespace dttbsr {

// Multi-channel audio, channel-major: samples[c * frames + t].
struct Waveform {
  std::size_t channels = 0;
  std::size_t frames = 0;
  int sample_rate = 44100;
  std::vector<float> samples;

  Waveform() = default;
  Waveform(std::size_t num_channels, std::size_t num_frames, int rate)
      : channels(num_channels),
        frames(num_frames),
        sample_rate(rate),
        samples(num_channels * num_frames, 0.0f) {}

  std::span<float> channel(std::size_t c) {
    return {samples.data() + c * frames, frames};
  }
  std::span<const float> channel(std::size_t c) const {
    return {samples.data() + c * frames, frames};
  }
  float& at(std::size_t c, std::size_t t) { return samples[c * frames + t]; }
  float at(std::size_t c, std::size_t t) const {
    return samples[c * frames + t];
  }

  double duration_seconds() const {
    return static_cast<double>(frames) / sample_rate;
  }

  float peak() const {
    float p = 0.0f;
    for (float s : samples) p = std::max(p, std::abs(s));
    return p;
  }

  // Throws ArgumentError when an invariant is broken.
  void validate() const {
    if (channels < 1) throw ArgumentError("waveform has no channels");
    if (sample_rate <= 0) throw ArgumentError("waveform sample rate must be positive");
    if (samples.size() != channels * frames) {
      throw ArgumentError("waveform sample buffer does not match channels x frames");
    }
    for (float s : samples) {
      if (!std::isfinite(s)) throw ArgumentError("waveform contains non-finite samples");
    }
  }

  bool same_layout(const Waveform& other) const {
    return channels == other.channels && frames == other.frames &&
           sample_rate == other.sample_rate;
  }

  friend bool operator==(const Waveform&, const Waveform&) = default;
};

enum class WavEncoding { kPcm16, kFloat32 };

struct WavInfo {
  std::uint16_t format_tag = 0;
  std::uint16_t channels = 0;
  std::uint32_t sample_rate = 0;
  std::uint16_t bits_per_sample = 0;
  std::size_t frames = 0;
  std::uint64_t data_offset = 0;  // byte offset of the first frame
};

namespace wav_detail {

inline constexpr std::uint16_t kFormatPcm = 1;
inline constexpr std::uint16_t kFormatFloat = 3;
inline constexpr std::uint16_t kFormatExtensible = 0xFFFE;

inline std::uint16_t le16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}
inline std::uint32_t le32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
inline void put16(std::vector<unsigned char>& out, std::uint16_t v) {
  out.push_back(static_cast<unsigned char>(v & 0xFF));
  out.push_back(static_cast<unsigned char>(v >> 8));
}
inline void put32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xFF));
}

inline WavInfo parse_header(std::ifstream& in, const std::string& path) {
  in.seekg(0, std::ios::end);
  const auto file_size = static_cast<std::uint64_t>(in.tellg());
  in.seekg(0);
  unsigned char riff[12];
  if (!in.read(reinterpret_cast<char*>(riff), 12) ||
      std::memcmp(riff, "RIFF", 4) != 0 || std::memcmp(riff + 8, "WAVE", 4) != 0) {
    throw FormatError(path + ": not a RIFF/WAVE file");
  }
  WavInfo info;
  bool have_fmt = false;
  std::uint64_t pos = 12;
  while (pos + 8 <= file_size) {
    unsigned char hdr[8];
    in.seekg(static_cast<std::streamoff>(pos));
    if (!in.read(reinterpret_cast<char*>(hdr), 8)) break;
    const std::uint32_t size = le32(hdr + 4);
    const std::uint64_t body = pos + 8;
    if (std::memcmp(hdr, "fmt ", 4) == 0) {
      if (size < 16 || body + size > file_size) throw FormatError(path + ": malformed fmt chunk");
      std::vector<unsigned char> fmt(size);
      in.read(reinterpret_cast<char*>(fmt.data()), size);
      info.format_tag = le16(fmt.data());
      info.channels = le16(fmt.data() + 2);
      info.sample_rate = le32(fmt.data() + 4);
      info.bits_per_sample = le16(fmt.data() + 14);
      if (info.format_tag == kFormatExtensible) {
        if (size < 26) throw FormatError(path + ": malformed extensible fmt chunk");
        info.format_tag = le16(fmt.data() + 24);  // first two bytes of the subformat GUID
      }
      have_fmt = true;
    } else if (std::memcmp(hdr, "data", 4) == 0) {
      if (!have_fmt) throw FormatError(path + ": data chunk precedes fmt chunk");
      if (info.channels == 0 || info.sample_rate == 0) {
        throw FormatError(path + ": zero channels or sample rate");
      }
      const bool supported =
          (info.format_tag == kFormatPcm &&
           (info.bits_per_sample == 16 || info.bits_per_sample == 24)) ||
          (info.format_tag == kFormatFloat && info.bits_per_sample == 32);
      if (!supported) {
        throw UnsupportedError(path + ": unsupported codec (format tag " +
                               std::to_string(info.format_tag) + ", " +
                               std::to_string(info.bits_per_sample) + " bits)");
      }
      const std::uint64_t frame_bytes =
          static_cast<std::uint64_t>(info.channels) * (info.bits_per_sample / 8);
      if (body + size > file_size || size % frame_bytes != 0) {
        throw CorruptFileError(path + ": truncated data chunk");
      }
      info.frames = size / frame_bytes;
      info.data_offset = body;
      return info;
    }
    pos = body + size + (size & 1u);
  }
  if (!have_fmt) throw FormatError(path + ": missing fmt chunk");
  throw FormatError(path + ": missing data chunk");
}

}  // namespace wav_detail

inline WavInfo wav_info(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return wav_detail::parse_header(in, path.string());
}

// Reads `count` frames starting at frame `start`. Frames past the end of the
// file are not read; the result is shortened accordingly.
inline Waveform read_wav(const std::filesystem::path& path, std::size_t start,
                         std::size_t count) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const WavInfo info = wav_detail::parse_header(in, path.string());
  start = std::min(start, info.frames);
  count = std::min(count, info.frames - start);
  const std::size_t bytes_per_sample = info.bits_per_sample / 8;
  const std::size_t frame_bytes = bytes_per_sample * info.channels;
  std::vector<unsigned char> raw(count * frame_bytes);
  in.seekg(static_cast<std::streamoff>(info.data_offset + start * frame_bytes));
  if (!raw.empty() && !in.read(reinterpret_cast<char*>(raw.data()),
                               static_cast<std::streamsize>(raw.size()))) {
    throw CorruptFileError(path.string() + ": truncated data chunk");
  }

  Waveform w(info.channels, count, static_cast<int>(info.sample_rate));
  for (std::size_t t = 0; t < count; ++t) {
    for (std::size_t c = 0; c < info.channels; ++c) {
      const unsigned char* p = raw.data() + t * frame_bytes + c * bytes_per_sample;
      float v = 0.0f;
      if (info.format_tag == wav_detail::kFormatFloat) {
        std::uint32_t bits = wav_detail::le32(p);
        std::memcpy(&v, &bits, sizeof v);
      } else if (info.bits_per_sample == 16) {
        v = static_cast<float>(static_cast<std::int16_t>(wav_detail::le16(p))) / 32768.0f;
      } else {
        std::int32_t s = static_cast<std::int32_t>(p[0] | (p[1] << 8) | (p[2] << 16));
        if (s & 0x800000) s -= 0x1000000;
        v = static_cast<float>(s) / 8388608.0f;
      }
      w.at(c, t) = v;
    }
  }
  return w;
}

inline Waveform read_wav(const std::filesystem::path& path) {
  return read_wav(path, 0, static_cast<std::size_t>(-1));
}

inline std::int16_t encode_pcm16(float x) {
  const double clamped = std::clamp(static_cast<double>(x), -1.0, 1.0);
  const double code = std::round(clamped * 32768.0);  // half away from zero
  return static_cast<std::int16_t>(std::clamp(code, -32768.0, 32767.0));
}

inline void write_wav(const std::filesystem::path& path, const Waveform& w,
                      WavEncoding encoding = WavEncoding::kFloat32) {
  w.validate();
  const bool is_float = encoding == WavEncoding::kFloat32;
  const std::uint16_t bits = is_float ? 32 : 16;
  const std::uint16_t block_align = static_cast<std::uint16_t>(w.channels * bits / 8);
  const std::uint64_t data_bytes = static_cast<std::uint64_t>(w.frames) * block_align;
  if (data_bytes > 0xFFFFFFFFull - 44) throw ArgumentError("waveform too large for RIFF");

  std::vector<unsigned char> out;
  out.reserve(44 + data_bytes);
  out.insert(out.end(), {'R', 'I', 'F', 'F'});
  wav_detail::put32(out, static_cast<std::uint32_t>(36 + data_bytes));
  out.insert(out.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  wav_detail::put32(out, 16);
  wav_detail::put16(out, is_float ? wav_detail::kFormatFloat : wav_detail::kFormatPcm);
  wav_detail::put16(out, static_cast<std::uint16_t>(w.channels));
  wav_detail::put32(out, static_cast<std::uint32_t>(w.sample_rate));
  wav_detail::put32(out, static_cast<std::uint32_t>(w.sample_rate) * block_align);
  wav_detail::put16(out, block_align);
  wav_detail::put16(out, bits);
  out.insert(out.end(), {'d', 'a', 't', 'a'});
  wav_detail::put32(out, static_cast<std::uint32_t>(data_bytes));
  for (std::size_t t = 0; t < w.frames; ++t) {
    for (std::size_t c = 0; c < w.channels; ++c) {
      const float x = w.at(c, t);
      if (is_float) {
        std::uint32_t u;
        std::memcpy(&u, &x, sizeof u);
        wav_detail::put32(out, u);
      } else {
        wav_detail::put16(out, static_cast<std::uint16_t>(encode_pcm16(x)));
      }
    }
  }

  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw IoError("cannot write " + path.string());
  file.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!file) throw IoError("write failed for " + path.string());
}

}  // namespace dttbsr
