// dttbsr command-line tool: toydata, train, restore, eval, info.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dttbsr/dttbsr.hpp"

namespace fs = std::filesystem;
using namespace dttbsr;

namespace {

constexpr int kOk = 0;
constexpr int kRuntimeFailure = 1;
constexpr int kUsageError = 2;

// Raised for bad paths or flags detected after parsing; maps to exit 2.
class UsageError : public Error {
 public:
  using Error::Error;
};

struct GlobalOptions {
  bool verbose = false;
};

struct ToydataOptions {
  fs::path out;
  std::size_t songs = 2;
  double duration = 3.0;
  int sample_rate = 44100;
  std::uint64_t seed = 0;
};

struct TrainOptionsCli {
  fs::path config;
  fs::path data;
  fs::path out;
  fs::path resume;
  std::optional<std::size_t> steps;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> stem;
  std::vector<std::string> overrides;
};

struct RestoreOptions {
  fs::path checkpoint;
  fs::path input;
  fs::path output;
  double chunk_seconds = 6.0;
  double overlap = 0.25;
};

struct EvalOptions {
  fs::path est;
  fs::path ref;
  fs::path report;
  std::string stem = "unknown";
};

struct InfoOptions {
  fs::path checkpoint;
  fs::path config;
};

// --config, else $DTTBSR_CONFIG, else built-in defaults.
TrainConfig resolve_config(const fs::path& flag, bool verbose) {
  fs::path path = flag;
  if (path.empty()) {
    if (const char* env = std::getenv("DTTBSR_CONFIG"); env != nullptr && *env != '\0') path = env;
  }
  if (path.empty()) {
    if (verbose) std::cerr << "using built-in default config\n";
    return TrainConfig{};
  }
  if (!fs::exists(path)) throw UsageError("config file not found: " + path.string());
  if (verbose) std::cerr << "config: " << path.string() << "\n";
  return load_train_config(path);
}

int cmd_toydata(const ToydataOptions& o, const GlobalOptions& g) {
  ToySpec spec;
  spec.n_songs = o.songs;
  spec.duration = o.duration;
  spec.sample_rate = o.sample_rate;
  spec.seed = o.seed;
  try {
    spec.validate();
  } catch (const ArgumentError& e) {
    throw UsageError(e.what());
  }
  const DatasetIndex index = generate_toy_dataset(spec, o.out);
  std::cout << "wrote " << index.songs.size() << " songs to " << o.out.string() << "\n";
  if (g.verbose) {
    for (const Song& s : index.songs) std::cerr << "  " << s.name << " (" << s.frames << " frames)\n";
  }
  return kOk;
}

int cmd_train(const TrainOptionsCli& o, const GlobalOptions& g) {
  TrainConfig cfg = resolve_config(o.config, g.verbose);
  cfg = apply_overrides(cfg, o.overrides);
  if (o.steps) cfg.total_steps = *o.steps;
  if (o.seed) cfg.seed = *o.seed;
  if (o.stem) cfg.target_stem = *o.stem;
  cfg.validate();

  if (!fs::is_directory(o.data)) throw UsageError("dataset root not found: " + o.data.string());
  if (!o.resume.empty() && !fs::exists(o.resume)) throw UsageError("resume checkpoint not found: " + o.resume.string());
  const DatasetIndex index = scan_dataset(o.data, cfg.target_stem, &std::cerr);
  if (index.sample_rate != cfg.sample_rate) {
    throw UsageError("dataset " + o.data.string() + " is sampled at " + std::to_string(index.sample_rate) +
                     " Hz but the config expects " + std::to_string(cfg.sample_rate) + " Hz");
  }

  TrainOptions opts;
  opts.resume_from = o.resume;
  if (g.verbose) opts.progress = &std::cerr;
  const auto saved = train(cfg, index, o.out, opts);
  std::cout << "trained " << cfg.total_steps << " steps on " << index.songs.size() << " songs; "
            << saved.size() << " checkpoints in " << o.out.string() << "\n";
  return kOk;
}

int cmd_restore(const RestoreOptions& o, const GlobalOptions& g) {
  if (!fs::exists(o.checkpoint)) throw UsageError("checkpoint not found: " + o.checkpoint.string());
  if (!fs::exists(o.input)) throw UsageError("input file not found: " + o.input.string());
  if (!(o.chunk_seconds > 0.0)) throw UsageError("--chunk-seconds must be positive");
  if (!(o.overlap >= 0.0 && o.overlap < 1.0)) throw UsageError("--overlap must lie in [0, 1)");

  const RestorationModel model(load_checkpoint(o.checkpoint));
  const Waveform input = read_wav(o.input);
  const TrainConfig& cfg = model.config();
  if (input.channels != cfg.generator.channels) {
    throw ConfigMismatchError("input has " + std::to_string(input.channels) + " channels, model expects " +
                              std::to_string(cfg.generator.channels));
  }
  if (input.sample_rate != cfg.sample_rate) {
    throw ConfigMismatchError("input is sampled at " + std::to_string(input.sample_rate) + " Hz, model expects " +
                              std::to_string(cfg.sample_rate) + " Hz");
  }
  const Waveform out = model.restore_chunked(input, o.chunk_seconds, o.overlap);
  if (o.output.has_parent_path()) fs::create_directories(o.output.parent_path());
  write_wav(o.output, out);
  if (g.verbose) std::cerr << "restored " << input.frames << " frames at " << input.sample_rate << " Hz\n";
  std::cout << "wrote " << o.output.string() << "\n";
  return kOk;
}

int cmd_eval(const EvalOptions& o, const GlobalOptions& g) {
  if (!fs::is_directory(o.est)) throw UsageError("estimate directory not found: " + o.est.string());
  if (!fs::is_directory(o.ref)) throw UsageError("reference directory not found: " + o.ref.string());
  const MetricReport report = evaluate_directory(o.est, o.ref, o.stem, MmsnrConfig{}, &std::cerr);
  if (!o.report.empty()) {
    if (o.report.has_parent_path()) fs::create_directories(o.report.parent_path());
    write_report(report, o.report);
    if (g.verbose) std::cerr << "report: " << o.report.string() << "\n";
  }
  std::cout << format_report_table(report);
  if (!report.ok()) {
    std::cerr << "error: " << report.error << "\n";
    return kRuntimeFailure;
  }
  return kOk;
}

int cmd_info(const InfoOptions& o, const GlobalOptions&) {
  if (o.checkpoint.empty() == o.config.empty()) throw UsageError("info needs exactly one of --checkpoint or --config");
  TrainConfig cfg;
  nlohmann::json out;
  if (!o.checkpoint.empty()) {
    if (!fs::exists(o.checkpoint)) throw UsageError("checkpoint not found: " + o.checkpoint.string());
    const Checkpoint ckpt = load_checkpoint(o.checkpoint);
    cfg = ckpt.config;
    out["step"] = ckpt.step;
    out["tensors"] = ckpt.tensors.size();
  } else {
    if (!fs::exists(o.config)) throw UsageError("config file not found: " + o.config.string());
    cfg = load_train_config(o.config);
  }
  out["generator_parameters"] = count_parameters(cfg.generator);
  out["config"] = to_json(cfg);
  std::cout << out.dump(2) << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Music source restoration: train, restore and evaluate"};
  app.require_subcommand(1);
  GlobalOptions global;
  app.add_flag("-v,--verbose", global.verbose, "Print progress to stderr");

  ToydataOptions toy;
  auto* toydata = app.add_subcommand("toydata", "Synthesize a deterministic multitrack dataset");
  toydata->add_option("--out", toy.out, "Output directory")->required();
  toydata->add_option("--songs", toy.songs, "Number of songs")->capture_default_str();
  toydata->add_option("--duration", toy.duration, "Song length in seconds")->capture_default_str();
  toydata->add_option("--sample-rate", toy.sample_rate, "Sample rate in Hz")->capture_default_str();
  toydata->add_option("--seed", toy.seed, "Random seed")->capture_default_str();

  TrainOptionsCli tr;
  auto* train_cmd = app.add_subcommand("train", "Train a generator and discriminator");
  train_cmd->add_option("--config", tr.config, "JSON config (default: $DTTBSR_CONFIG, then built-in)");
  train_cmd->add_option("--data", tr.data, "Dataset root with one directory per song")->required();
  train_cmd->add_option("--out", tr.out, "Checkpoint and log directory")->required();
  train_cmd->add_option("--steps", tr.steps, "Override train.total_steps");
  train_cmd->add_option("--seed", tr.seed, "Override train.seed");
  train_cmd->add_option("--stem", tr.stem, "Override train.target_stem");
  train_cmd->add_option("--override", tr.overrides, "section.key=value (repeatable)");
  train_cmd->add_option("--resume", tr.resume, "Checkpoint manifest to resume from");

  RestoreOptions rs;
  auto* restore_cmd = app.add_subcommand("restore", "Restore a stem from a mixture WAV");
  restore_cmd->add_option("--checkpoint", rs.checkpoint, "Checkpoint manifest")->required();
  restore_cmd->add_option("--input", rs.input, "Mixture WAV")->required();
  restore_cmd->add_option("--output", rs.output, "Output WAV")->required();
  restore_cmd->add_option("--chunk-seconds", rs.chunk_seconds, "Chunk length in seconds")->capture_default_str();
  restore_cmd->add_option("--overlap", rs.overlap, "Chunk overlap fraction")->capture_default_str();

  EvalOptions ev;
  auto* eval_cmd = app.add_subcommand("eval", "Score estimate WAVs against references with MMSNR");
  eval_cmd->add_option("--est", ev.est, "Directory of estimates")->required();
  eval_cmd->add_option("--ref", ev.ref, "Directory of references")->required();
  eval_cmd->add_option("--report", ev.report, "JSON report path");
  eval_cmd->add_option("--stem", ev.stem, "Stem label recorded in the report")->capture_default_str();

  InfoOptions in;
  auto* info_cmd = app.add_subcommand("info", "Print step, config and parameter count");
  info_cmd->add_option("--checkpoint", in.checkpoint, "Checkpoint manifest");
  info_cmd->add_option("--config", in.config, "JSON config");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsageError;
  }

  try {
    if (*toydata) return cmd_toydata(toy, global);
    if (*train_cmd) return cmd_train(tr, global);
    if (*restore_cmd) return cmd_restore(rs, global);
    if (*eval_cmd) return cmd_eval(ev, global);
    if (*info_cmd) return cmd_info(in, global);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsageError;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kUsageError;
  } catch (const EmptyDatasetError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsageError;
  } catch (const ChecksumError& e) {
    std::cerr << "checksum error: " << e.what() << "\n";
    return kRuntimeFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntimeFailure;
  }
  return kUsageError;
}
