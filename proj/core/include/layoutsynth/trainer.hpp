#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "layoutsynth/checkpoint.hpp"
#include "layoutsynth/config.hpp"
#include "layoutsynth/dataset.hpp"
#include "layoutsynth/networks.hpp"
#include "layoutsynth/nn.hpp"
#include "layoutsynth/rng.hpp"

namespace layoutsynth {

struct TrainingExample {
  std::size_t id = 0;
  Tensor<float> image;  // [3 x R x R]
  Layout layout;        // foreground boxes
  // Boxes come from simulated detections; their confidences weight the
  // object terms of the discriminator loss.
  bool detected = false;
};

enum class TrainMode { kFully, kSemi };

// Fully mode uses every annotated layout. Semi mode splits the samples with
// semi.supervised_fraction; the unlabeled part gets simulated detections.
std::vector<TrainingExample> make_examples(const Dataset& dataset, const RunConfig& config,
                                           TrainMode mode);

struct StepMetrics {
  std::uint64_t step = 0;
  double d_loss = 0;
  double g_loss = 0;
  double g_adv = 0;
  double recon = 0;
  double percep = 0;
  double p_img_real = 0;
  double p_img_fake = 0;
  double p_obj_real = 0;  // 0 when the batch has no objects
  double p_obj_fake = 0;
  double alpha_mean = 0;  // mean mask blend weight over normalization layers

  // One NDJSON record (no trailing newline).
  std::string to_json() const;
};

// Alternating hinge-loss training: one discriminator update on a detached
// generator batch, then one generator update through the updated critic.
class Trainer {
 public:
  Trainer(const RunConfig& config, std::vector<TrainingExample> examples);

  StepMetrics step();
  std::uint64_t steps_done() const { return step_; }

  CheckpointData checkpoint() const;
  // Restores parameters, spectral-norm vectors, optimizer moments, the PRNG
  // and the step counter. Throws CheckpointMismatchError when the tensor
  // table does not match this trainer's model.
  void restore(const CheckpointData& data);

  const RunConfig& config() const { return config_; }
  Generator<float>& generator() { return gen_; }
  const Generator<float>& generator() const { return gen_; }
  Discriminator<float>& discriminator() { return disc_; }
  const std::vector<TrainingExample>& examples() const { return examples_; }

 private:
  std::vector<std::size_t> draw_batch();

  RunConfig config_;
  std::vector<TrainingExample> examples_;
  Generator<float> gen_;
  Discriminator<float> disc_;
  FeatureExtractor<float> extractor_;
  AdamState<float> adam_g_;
  AdamState<float> adam_d_;
  Prng rng_;
  std::uint64_t step_ = 0;
};

// Seeds of the run's independent streams.
std::uint64_t generator_init_seed(std::uint64_t run_seed);
std::uint64_t discriminator_init_seed(std::uint64_t run_seed);

// Rebuilds a generator from a checkpoint written by Trainer::checkpoint().
// The embedded configuration is returned through `config` when non-null.
Generator<float> load_generator(const CheckpointData& data, RunConfig* config = nullptr);

}  // namespace layoutsynth
