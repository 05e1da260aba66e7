#pragma once

#include <string>
#include <utility>
#include <vector>

#include "rdcr/nn.hpp"
#include "rdcr/schedule.hpp"

namespace rdcr::config {

// Flat key=value text: one assignment per line, '#' starts a comment, keys
// are dotted paths.  Within one list the last assignment to a key wins, so
// overrides append.
using KeyValues = std::vector<std::pair<std::string, std::string>>;

KeyValues parse_text(const std::string& text, const std::string& origin);
KeyValues parse_file(const std::string& path);

struct DatasetConfig {
  std::string kind = "shapeset";  // shapeset | cifar10 | cifar100
  std::string dir;                // cifar binary directory
  int classes = 6;                // shapeset only
  int image_size = 16;            // shapeset only
  int train_count = 3000;
  int test_count = 600;
};

struct NoiseConfig {
  std::string kind = "none";  // none | symmetric | asymmetric | semi_sl
  double eps = 0.0;
  bool includes_self = false;
  std::string pairing = "next";  // or an explicit comma list
  int labeled = 0;               // semi_sl clean-label budget
  double validation_fraction = 0.01;
};

struct WeightConfig {
  train::Schedule s = train::Schedule::constant(1.0);
  train::Schedule c = train::Schedule::constant(0.0);
  train::Schedule r = train::Schedule::constant(0.0);
};

struct TrainSection {
  int epochs = 60;
  int batch = 32;
  uint64_t seed = 0;
  double lr = 0.05;
  double lr_floor = 0.0;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  int pretrain_epochs = 60;  // cosine-decay span before the cyclic phase
  int swa_cycles = 0;
  int swa_cycle_epochs = 30;
  int swa_captures_per_cycle = 1;
  std::string consistency = "mse";  // mse | kl
  double clip = 3.0;
  double ema_decay = 0.99;
  double ema_decay_late = 0.999;
  bool rotation = true;
};

struct AugmentConfig {
  int translate = 2;
  bool hflip = false;
  double noise_sigma = 0.15;
};

struct ExperimentConfig {
  DatasetConfig dataset;
  NoiseConfig noise;
  double width = 0.125;
  std::string norm = "gn+ws";
  int group_size = 16;
  double dropout = 0.5;
  WeightConfig weight;
  TrainSection train;
  AugmentConfig augment;
  std::string out_dir = "runs/out";

  nn::ModelConfig model_config() const;
};

// Typed resolution; any key the schema does not know is fatal.
ExperimentConfig resolve(const KeyValues& kv);

// Canonical echo of every resolved key.  Closure: resolving the echo yields
// the same config and the same echo, byte for byte.
std::string resolved_text(const ExperimentConfig& cfg);

// Named experiment configurations at publication scale; scale_tiny remaps
// each to ShapeSet at width 0.125 for desk runs.
std::vector<std::string> preset_names();
KeyValues preset_key_values(const std::string& name, bool scale_tiny);
ExperimentConfig preset(const std::string& name, bool scale_tiny);

}  // namespace rdcr::config
