#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "layoutsynth/image_io.hpp"
#include "layoutsynth/layout.hpp"
#include "layoutsynth/tensor.hpp"

namespace layoutsynth {

// Missing or malformed dataset files.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class ShapeKind { kCircle, kSquare, kTriangle, kDiamond };

struct ShapeSpec {
  std::string category;
  ShapeKind kind;
  std::array<double, 3> color;  // RGB in [0, 1]
};

// One spec per foreground category of the "shapes" set, in label order.
const std::vector<ShapeSpec>& shape_specs();

struct DatasetConfig {
  std::size_t resolution = 32;
  std::size_t num_samples = 64;
  std::size_t min_objects = 1;
  std::size_t max_objects = 4;
  bool allow_overlap = true;
  // Shape extent (bounding side) as a fraction of the resolution.
  double min_size = 0.3;
  double max_size = 0.55;
  double color_jitter = 0.06;
  bool operator==(const DatasetConfig&) const = default;
};

// Throws ConfigError naming the first offending field.
void validate(const DatasetConfig& config);

struct Sample {
  std::size_t id = 0;
  Image8 image;                // RGB, resolution x resolution
  Layout layout;               // foreground boxes, tight around each shape
  std::vector<Image8> gt_masks;  // full (unoccluded) shape per box, 0 / 255
  std::string split = "train";
};

struct Dataset {
  CategorySet categories;
  std::size_t resolution = 0;
  std::uint64_t seed = 0;
  std::vector<Sample> samples;
};

// Continuous geometry of one shape in pixel units; pixel (r, c) is inside
// when its center (c + 0.5, r + 0.5) satisfies the shape inequality.
struct ShapeGeometry {
  ShapeKind kind = ShapeKind::kCircle;
  double cx = 0, cy = 0;  // center
  double hx = 0, hy = 0;  // half extents
  bool contains(double x, double y) const;
};

// Binary coverage mask (0 / 1) of a shape on a resolution x resolution grid.
std::vector<std::uint8_t> rasterize(const ShapeGeometry& shape, std::size_t resolution);

// Deterministic in (config, seed); sample i draws from split_seed(seed, i).
Dataset make_dataset(const DatasetConfig& config, std::uint64_t seed);

// Directory layout: index.json, images/NNNN.png, masks/NNNN_i.png,
// layouts/NNNN.json.
void save_dataset(const Dataset& dataset, const std::string& dir);
Dataset load_dataset(const std::string& dir);

// Image of a sample as [3 x R x R] in [-1, 1].
template <std::floating_point T>
Tensor<T> sample_image(const Sample& sample);

struct DetectionNoise {
  double jitter_sigma = 0;  // per-coordinate normal jitter, normalized units
  double drop_prob = 0;
  double kappa = 2;         // confidence slope
  double tau = 0.5;         // confidence floor
  bool operator==(const DetectionNoise&) const = default;
};

// Noisy stand-in for a trained detector: every box is jittered and clamped,
// dropped with drop_prob, and given confidence
// clip(1 - kappa * max|coordinate shift|, tau, 1).
Layout simulate_detections(const Layout& layout, const DetectionNoise& noise,
                           std::uint64_t seed);

struct DatasetSplit {
  std::vector<std::size_t> supervised;
  std::vector<std::size_t> unlabeled;
};

// Random disjoint split of [0, n) with round(fraction * n) supervised
// indices; both parts are returned sorted.
DatasetSplit split_dataset(std::size_t n, double supervised_fraction, std::uint64_t seed);

}  // namespace layoutsynth
