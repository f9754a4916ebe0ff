#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "layoutsynth/dataset.hpp"
#include "layoutsynth/losses.hpp"
#include "layoutsynth/networks.hpp"
#include "layoutsynth/nn.hpp"

namespace layoutsynth {

struct OptimConfig {
  AdamConfig adam;
  std::size_t batch_size = 8;   // the reference recipe used 128 at full scale
  int power_iterations = 1;     // spectral-norm rounds per network per step
};

struct SemiConfig {
  double supervised_fraction = 0.5;
  DetectionNoise noise;
};

struct TrainConfig {
  std::size_t steps = 5000;
  std::size_t log_every = 1;
  std::size_t checkpoint_every = 0;  // 0: only the final checkpoint
};

// Everything a run depends on. Serialized as nested JSON sections; missing
// keys take the defaults below and unknown keys are rejected.
struct RunConfig {
  std::uint64_t seed = 0;
  std::string categories = "shapes";
  NetworkConfig model;
  LossConfig loss;
  OptimConfig optim;
  DatasetConfig data;
  SemiConfig semi;
  TrainConfig train;
  std::string data_dir = "data";
  std::string out_dir = "run";
};

// Throws ConfigError naming the first offending key.
void validate(const RunConfig& config);

std::string to_json(const RunConfig& config);
RunConfig parse_run_config(std::string_view text);
RunConfig load_run_config(const std::string& path);

}  // namespace layoutsynth
