#pragma once

// Dataset layout: <root>/<song>/<stem>.wav.

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "dttbsr/audio_io.hpp"
#include "dttbsr/augment.hpp"
#include "dttbsr/config.hpp"

namespace dttbsr {

struct Song {
  std::string name;
  std::map<std::string, std::filesystem::path> stems;
  std::size_t frames = 0;  // longest stem
  std::size_t channels = 0;
};

struct DatasetIndex {
  std::vector<Song> songs;
  int sample_rate = 0;
  std::string target_stem;

  bool empty() const { return songs.empty(); }
  std::size_t size() const { return songs.size(); }
};

// Indexes songs that contain `target_stem`; others (and songs whose stems
// disagree on sample rate or channel count) are skipped with a warning.
inline DatasetIndex scan_dataset(const std::filesystem::path& root, const std::string& target_stem,
                                 std::ostream* warnings = &std::cerr) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw IoError("dataset root is not a directory: " + root.string());
  if (!is_stem_label(target_stem)) throw ConfigError("unknown target stem '" + target_stem + "'");
  std::vector<fs::path> dirs;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory()) dirs.push_back(entry.path());
  }
  std::sort(dirs.begin(), dirs.end());
  DatasetIndex index;
  index.target_stem = target_stem;
  auto warn = [&](const std::string& msg) {
    if (warnings) *warnings << "warning: " << msg << "\n";
  };
  for (const auto& dir : dirs) {
    Song song;
    song.name = dir.filename().string();
    int rate = 0;
    bool consistent = true;
    for (const auto& label : stem_labels()) {
      const fs::path p = dir / (label + ".wav");
      if (!fs::is_regular_file(p)) continue;
      WavInfo info;
      try {
        info = wav_info(p);
      } catch (const Error& e) {
        warn("song " + song.name + ": unreadable " + p.filename().string() + " (" + e.what() + ")");
        consistent = false;
        break;
      }
      if (rate == 0) {
        rate = static_cast<int>(info.sample_rate);
        song.channels = info.channels;
      }
      if (static_cast<int>(info.sample_rate) != rate || info.channels != song.channels) {
        warn("song " + song.name + ": stems disagree on sample rate or channel count");
        consistent = false;
        break;
      }
      song.frames = std::max<std::size_t>(song.frames, info.frames);
      song.stems[label] = p;
    }
    if (!consistent) continue;
    if (!song.stems.count(target_stem)) {
      warn("song " + song.name + " has no " + target_stem + ".wav, excluded");
      continue;
    }
    if (index.sample_rate == 0) index.sample_rate = rate;
    if (rate != index.sample_rate) {
      warn("song " + song.name + " sample rate " + std::to_string(rate) + " differs from " +
           std::to_string(index.sample_rate) + ", excluded");
      continue;
    }
    index.songs.push_back(std::move(song));
  }
  if (index.songs.empty()) {
    throw EmptyDatasetError("no usable songs with stem '" + target_stem + "' under " + root.string());
  }
  return index;
}

// Reads `frames` samples of a stem starting at `offset`, zero-padding past its end.
inline Waveform read_chunk(const std::filesystem::path& path, std::size_t offset, std::size_t frames) {
  const WavInfo info = wav_info(path);
  Waveform out(info.channels, frames, static_cast<int>(info.sample_rate));
  if (offset >= info.frames) return out;
  const std::size_t avail = std::min(frames, static_cast<std::size_t>(info.frames) - offset);
  const Waveform part = read_wav(path, offset, avail);
  for (std::size_t c = 0; c < out.channels; ++c)
    for (std::size_t t = 0; t < avail; ++t) out.at(c, t) = part.at(c, t);
  return out;
}

// The stems of one song cut at [offset, offset + frames), ordered by label,
// with the index of the target stem.
inline std::pair<std::vector<Waveform>, std::size_t> read_song_chunk(const Song& song, const std::string& target,
                                                                     std::size_t offset, std::size_t frames) {
  std::vector<Waveform> stems;
  std::size_t target_index = 0;
  for (const auto& [label, path] : song.stems) {
    if (label == target) target_index = stems.size();
    stems.push_back(read_chunk(path, offset, frames));
  }
  return {std::move(stems), target_index};
}

inline std::vector<TrainingPair> sample_batch(const DatasetIndex& index, const TrainConfig& cfg, std::mt19937_64& rng) {
  if (index.empty()) throw EmptyDatasetError("cannot sample from an empty dataset");
  if (index.sample_rate != cfg.sample_rate) {
    throw ConfigError("dataset sample rate " + std::to_string(index.sample_rate) + " differs from configured " +
                      std::to_string(cfg.sample_rate));
  }
  const std::size_t frames = cfg.chunk_frames();
  std::vector<TrainingPair> batch;
  batch.reserve(cfg.batch_size);
  for (std::size_t b = 0; b < cfg.batch_size; ++b) {
    const Song& song = index.songs[rng() % index.songs.size()];
    if (song.channels != cfg.generator.channels) {
      throw ConfigError("song " + song.name + " has " + std::to_string(song.channels) + " channels, model expects " +
                        std::to_string(cfg.generator.channels));
    }
    const std::size_t span = song.frames > frames ? song.frames - frames : 0;
    const std::size_t offset = span == 0 ? 0 : static_cast<std::size_t>(rng() % (span + 1));
    auto [stems, target_index] = read_song_chunk(song, index.target_stem, offset, frames);
    batch.push_back(build_training_pair(stems, target_index, cfg.effects, rng));
  }
  return batch;
}

}  // namespace dttbsr
