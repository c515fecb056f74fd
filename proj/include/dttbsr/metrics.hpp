#pragma once

// Multi-mel SNR and directory-level evaluation reports.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "dttbsr/audio_io.hpp"
#include "dttbsr/spectral.hpp"

namespace dttbsr {

struct MmsnrConfig {
  std::vector<std::size_t> windows{2048, 1024, 512, 256};
  std::vector<std::size_t> mel_bins{160, 80, 40, 20};
  double cap_db = 100.0;

  void validate() const {
    if (windows.empty() || windows.size() != mel_bins.size()) {
      throw ArgumentError("MMSNR windows and mel_bins must be non-empty and of equal length");
    }
    if (!(cap_db > 0.0)) throw ArgumentError("MMSNR cap must be positive");
  }
};

struct MmsnrResult {
  double db = 0.0;
  bool silent_reference = false;
};

// Mean over resolutions of 10 log10(sum M_ref^2 / sum (M_ref - M_est)^2) on
// mel magnitudes, clamped to [-cap, cap].
inline MmsnrResult mmsnr_result(const Waveform& est, const Waveform& ref, const MmsnrConfig& cfg = {}) {
  cfg.validate();
  est.validate();
  ref.validate();
  if (!est.same_layout(ref)) throw ArgumentError("mmsnr: estimate and reference differ in shape or rate");
  if (ref.frames == 0) throw EmptyInputError("mmsnr of empty waveforms");
  if (ref.peak() == 0.0) return {-cfg.cap_db, true};
  double total = 0.0;
  for (std::size_t i = 0; i < cfg.windows.size(); ++i) {
    const MelFilterbank fb = mel_filterbank(cfg.windows[i], cfg.mel_bins[i], ref.sample_rate, 0.0,
                                            ref.sample_rate / 2.0);
    const MelSpectrogram mr = mel_spectrogram(ref, cfg.windows[i], fb);
    const MelSpectrogram me = mel_spectrogram(est, cfg.windows[i], fb);
    double signal = 0.0, noise = 0.0;
    for (std::size_t k = 0; k < mr.values.size(); ++k) {
      const double d = mr.values[k] - me.values[k];
      signal += mr.values[k] * mr.values[k];
      noise += d * d;
    }
    if (signal == 0.0) return {-cfg.cap_db, true};
    const double snr = noise == 0.0 ? cfg.cap_db : 10.0 * std::log10(signal / noise);
    total += std::clamp(snr, -cfg.cap_db, cfg.cap_db);
  }
  return {total / static_cast<double>(cfg.windows.size()), false};
}

inline double mmsnr(const Waveform& est, const Waveform& ref, const MmsnrConfig& cfg = {}) {
  return mmsnr_result(est, ref, cfg).db;
}

struct FileScore {
  std::string name;
  double mmsnr = 0.0;
};

struct MetricReport {
  std::string stem;
  std::vector<FileScore> files;
  std::vector<std::string> skipped;
  std::optional<double> mean;
  std::string error;

  bool ok() const { return error.empty(); }
};

inline MetricReport evaluate_directory(const std::filesystem::path& est_dir, const std::filesystem::path& ref_dir,
                                       const std::string& stem, const MmsnrConfig& cfg = {},
                                       std::ostream* warnings = &std::cerr) {
  namespace fs = std::filesystem;
  for (const auto& dir : {est_dir, ref_dir}) {
    if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  }
  std::vector<std::string> names;
  for (const auto& entry : fs::directory_iterator(est_dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".wav") names.push_back(entry.path().filename().string());
  }
  std::sort(names.begin(), names.end());
  MetricReport report;
  report.stem = stem;
  for (const std::string& name : names) {
    const fs::path ref_path = ref_dir / name;
    if (!fs::is_regular_file(ref_path)) {
      report.skipped.push_back(name);
      if (warnings) *warnings << "warning: no reference for " << name << ", skipped\n";
      continue;
    }
    try {
      report.files.push_back({name, mmsnr(read_wav(est_dir / name), read_wav(ref_path), cfg)});
    } catch (const Error& e) {
      report.skipped.push_back(name);
      if (warnings) *warnings << "warning: " << name << " skipped: " << e.what() << "\n";
    }
  }
  if (report.files.empty()) {
    report.error = "no estimate/reference pairs to evaluate";
    return report;
  }
  double sum = 0.0;
  for (const auto& f : report.files) sum += f.mmsnr;
  report.mean = sum / static_cast<double>(report.files.size());
  return report;
}

inline nlohmann::json report_to_json(const MetricReport& r) {
  nlohmann::json j;
  j["stem"] = r.stem;
  j["files"] = nlohmann::json::array();
  for (const auto& f : r.files) j["files"].push_back({{"name", f.name}, {"mmsnr_db", f.mmsnr}});
  j["skipped"] = r.skipped;
  j["mean_db"] = r.mean ? nlohmann::json(*r.mean) : nlohmann::json(nullptr);
  if (!r.error.empty()) j["error"] = r.error;
  return j;
}

inline MetricReport report_from_json(const nlohmann::json& j) {
  try {
    MetricReport r;
    r.stem = j.at("stem").get<std::string>();
    for (const auto& f : j.at("files")) r.files.push_back({f.at("name").get<std::string>(), f.at("mmsnr_db").get<double>()});
    r.skipped = j.at("skipped").get<std::vector<std::string>>();
    if (!j.at("mean_db").is_null()) r.mean = j.at("mean_db").get<double>();
    if (j.contains("error")) r.error = j.at("error").get<std::string>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed metric report: ") + e.what());
  }
}

inline void write_report(const MetricReport& r, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write report " + path.string());
  out << report_to_json(r).dump(2) << "\n";
  if (!out) throw IoError("failed writing report " + path.string());
}

inline MetricReport read_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read report " + path.string());
  try {
    return report_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError("report " + path.string() + " is not valid JSON: " + e.what());
  }
}

inline std::string format_report_table(const MetricReport& r) {
  std::ostringstream os;
  std::size_t width = 4;
  for (const auto& f : r.files) width = std::max(width, f.name.size());
  os << "stem: " << (r.stem.empty() ? "-" : r.stem) << "\n";
  os << std::left;
  os.width(static_cast<std::streamsize>(width + 2));
  os << "file" << "MMSNR (dB)\n";
  os.setf(std::ios::fixed);
  os.precision(4);
  for (const auto& f : r.files) {
    os.width(static_cast<std::streamsize>(width + 2));
    os << f.name << f.mmsnr << "\n";
  }
  for (const auto& s : r.skipped) os << s << "  (skipped)\n";
  if (r.mean) {
    os.width(static_cast<std::streamsize>(width + 2));
    os << "mean" << *r.mean << "\n";
  } else {
    os << "mean: n/a (" << r.error << ")\n";
  }
  return os.str();
}

}  // namespace dttbsr
