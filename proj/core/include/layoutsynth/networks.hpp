#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "layoutsynth/layout.hpp"
#include "layoutsynth/nn.hpp"
#include "layoutsynth/tensor.hpp"

namespace layoutsynth {

struct NetworkConfig {
  std::size_t resolution = 32;      // R, power of two >= 16
  std::size_t num_categories = 5;   // d_l, background included
  std::size_t d_img = kDefaultLatentDim;
  std::size_t d_embed = kDefaultLatentDim;
  std::size_t d_obj = kDefaultLatentDim;
  std::size_t gen_channels = 64;    // channels of the 4x4 seed feature
  std::size_t mask_size = 32;       // s
  std::size_t mask_channels = 16;
  std::size_t disc_channels = 16;   // channels of the first down block
  std::size_t roi_size = 4;
  std::size_t pyramid_levels = 2;

  bool operator==(const NetworkConfig&) const = default;
};

// Throws ConfigError naming the first offending field.
void validate(const NetworkConfig& config);

// Number of up/down-sampling stages between 4x4 and R.
std::size_t stage_count(const NetworkConfig& config);

// Generator feature channels entering stage k (k == stage_count() gives the
// channels at R): gen_channels >> k, but never below min(gen_channels, 8).
std::size_t generator_channels(const NetworkConfig& config, std::size_t stage);

// Discriminator channels after down block k: disc_channels << min(k, 3).
std::size_t discriminator_channels(const NetworkConfig& config, std::size_t block);

// Coarser levels for larger boxes:
//   clamp(floor(log2(sqrt(area) / R * 2^(levels - 1))), 0, levels - 1)
// with area in pixels at resolution R.
std::size_t assign_pyramid_level(const PixelRect& rect, std::size_t resolution,
                                 std::size_t levels);

struct GeneratorOptions {
  // Forces every mask blend weight to zero (shape masks only).
  bool alpha_zero = false;
};

template <std::floating_point T>
struct GeneratorOutput {
  Tensor<T> images;                   // [N x 3 x R x R]
  std::vector<Tensor<T>> label_maps;  // [N x d_l x H x H] for H = 4 .. R
  // Per sample, from the last normalization layer at R.
  std::vector<Tensor<T>> masks;        // blended [m' x R x R]
  std::vector<Tensor<T>> shape_masks;  // generated and placed [m' x R x R]
  std::vector<Tensor<T>> raw_masks;    // [m' x s x s]
  std::vector<std::vector<std::int32_t>> label_images;  // argmax labels, R*R
};

// Up-ResBlock generator conditioned through ISLA normalization. Parameters:
// isla.embed, isla.s<k>.{tomask,n1,n2}.*, isla.out.tomask.*, gen.*.
template <std::floating_point T>
class Generator {
 public:
  Generator(const NetworkConfig& config, std::uint64_t seed);

  // Layouts must include the background instance; styles row counts must
  // match.
  GeneratorOutput<T> forward(std::span<const Layout> layouts,
                             std::span<const StyleCodes> styles,
                             const GeneratorOptions& options = {}) const;

  // S = [W-embedded labels, z_obj rows].
  Tensor<T> joint_encoding(const Layout& layout, const StyleCodes& styles) const;
  // Mask generator applied row by row to S [K x (d_e + d_obj)] -> [K x s x s].
  Tensor<T> instance_masks(const Tensor<T>& joint) const;

  const NetworkConfig& config() const { return config_; }
  ParameterStore<T>& params() { return params_; }
  const ParameterStore<T>& params() const { return params_; }

 private:
  Tensor<T> isla_layer(const Tensor<T>& x, const std::string& prefix,
                       std::span<const Layout> layouts,
                       const std::vector<Tensor<T>>& joints,
                       const std::vector<Tensor<T>>& raw,
                       const std::vector<Tensor<T>>& feature_masks,
                       const GeneratorOptions& options,
                       std::vector<Tensor<T>>* blended,
                       std::vector<Tensor<T>>* placed) const;
  Tensor<T> linear(const Tensor<T>& x, const std::string& name) const;
  Tensor<T> conv(const Tensor<T>& x, const std::string& name) const;

  NetworkConfig config_;
  ParameterStore<T> params_;
};

template <std::floating_point T>
struct DiscriminatorOutput {
  Tensor<T> image_scores;                // [N]
  std::vector<Tensor<T>> object_scores;  // per sample [m], undefined when m = 0
  std::vector<std::vector<std::size_t>> levels;  // pyramid level per object
};

// Down-ResBlock critic with an image head and a RoIAlign object head using
// projection scoring. Parameters: disc.*.
template <std::floating_point T>
class Discriminator {
 public:
  Discriminator(const NetworkConfig& config, std::uint64_t seed);

  // Background instances, when present, are not scored.
  DiscriminatorOutput<T> forward(const Tensor<T>& images,
                                 std::span<const Layout> layouts) const;

  const NetworkConfig& config() const { return config_; }
  ParameterStore<T>& params() { return params_; }
  const ParameterStore<T>& params() const { return params_; }

 private:
  Tensor<T> conv(const Tensor<T>& x, const std::string& name) const;
  Tensor<T> res_block(const Tensor<T>& x, const std::string& name, bool down,
                      bool pre_activation) const;

  NetworkConfig config_;
  ParameterStore<T> params_;
};

inline constexpr std::uint64_t kFeatureExtractorSeed = 0x1517a0f5eedULL;

// Frozen three-stage conv net with fixed orthogonal weights; stands in for a
// pretrained feature network in the perceptual loss and the diversity proxy.
template <std::floating_point T>
class FeatureExtractor {
 public:
  explicit FeatureExtractor(std::uint64_t seed = kFeatureExtractorSeed);

  // Stage outputs for images [N x 3 x H x W] (H, W divisible by 4).
  std::vector<Tensor<T>> forward(const Tensor<T>& images) const;

 private:
  std::vector<Tensor<T>> kernels_;
};

}  // namespace layoutsynth
