#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dimask/losses.hpp"
#include "dimask/model.hpp"
#include "dimask/synth.hpp"

namespace dimask::config {

struct DataConfig {
  synth::SynthConfig synth;
  std::size_t train_scenes = 2000;
  std::size_t val_scenes = 200;
  std::uint64_t seed = 1;  // train split base seed; validation uses seed + 1

  bool operator==(const DataConfig&) const = default;
};

struct OptimConfig {
  double lr = 1e-4;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double decay_at = 0.9;      // fraction of total steps
  double decay_factor = 0.1;
  double clip_norm = 0.1;     // global gradient norm; 0 disables

  bool operator==(const OptimConfig&) const = default;
};

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch = 8;
  std::uint64_t seed = 0;
  std::size_t eval_every = 0;  // epochs between validation passes; 0 = end only

  bool operator==(const TrainConfig&) const = default;
};

struct ExperimentConfig {
  model::ModelConfig model;  // model.classes follows data.classes
  loss::LossWeights loss;
  DataConfig data;
  OptimConfig optim;
  TrainConfig train;
  std::vector<std::uint64_t> ablation_seeds{0, 1, 2};
  std::string output_dir;  // empty: no files written by train()

  bool operator==(const ExperimentConfig&) const = default;

  void validate() const;  // ConfigError
};

struct Parsed {
  ExperimentConfig config;
  std::vector<std::string> defaulted;  // keys absent from the file, in table order
};

// INI-style text: `[section]` headers, `key = value` lines, full-line
// comments starting with '#' or ';'. Every key is optional. Unknown or
// repeated keys and malformed lines raise ConfigError naming `origin` and
// the line number.
Parsed parse(const std::string& text, const std::string& origin = "config");
Parsed load(const std::string& path);

// Every key, in table order, with values that parse back to the same config.
std::string serialize(const ExperimentConfig& config);

// Applies one `section.key` assignment (command-line overrides).
void set(ExperimentConfig& config, const std::string& dotted_key, const std::string& value);

std::vector<std::string> keys();

// Hex FNV-1a of serialize(config).
std::string hash(const ExperimentConfig& config);

}  // namespace dimask::config
