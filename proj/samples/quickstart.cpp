// Trains a tiny model for a few steps on synthetic multitracks, then restores
// the first song's bass stem from its mixture and scores it.

#include <filesystem>
#include <iostream>

#include "dttbsr/dttbsr.hpp"

int main(int argc, char** argv) {
  namespace fs = std::filesystem;
  using namespace dttbsr;
  const fs::path work = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "dttbsr_quickstart";

  TrainConfig cfg = load_train_config(fs::path(DTTBSR_SAMPLES_DIR) / "configs" / "tiny.json");
  cfg.total_steps = 20;
  cfg.checkpoint_every = 10;

  ToySpec toy;
  toy.sample_rate = cfg.sample_rate;
  toy.duration = 2.0;
  const DatasetIndex data = generate_toy_dataset(toy, work / "data", cfg.target_stem);
  const auto checkpoints = train(cfg, data, work / "run");
  std::cout << "checkpoints: " << checkpoints.size() << "\n";

  const RestorationModel model(load_checkpoint(checkpoints.back()));
  const auto pair = validation_pairs(data, cfg).front();
  const Waveform estimate = model.restore(pair.mixture);
  std::cout << "mixture  MMSNR " << mmsnr(pair.mixture, pair.target) << " dB\n";
  std::cout << "estimate MMSNR " << mmsnr(estimate, pair.target) << " dB\n";
  return 0;
}
