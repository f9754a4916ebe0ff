#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "layoutsynth/dataset.hpp"
#include "layoutsynth/image_io.hpp"
#include "layoutsynth/layout.hpp"
#include "layoutsynth/networks.hpp"

namespace layoutsynth {

// Synthesizes images [N x 3 x R x R] for layouts that include the background.
using ImageModel = std::function<Tensor<float>(std::span<const Layout>,
                                               std::span<const StyleCodes>)>;

// Soft instance masks [m' x R x R] (background first), one per sample.
using MaskModel = std::function<std::vector<Tensor<float>>(
    std::span<const Sample* const> samples, std::span<const Layout> with_bg,
    std::span<const StyleCodes> styles)>;

// Dataset-wide evaluations synthesize in consecutive batches of this size,
// matching the training batch statistics.
inline constexpr std::size_t kEvalBatch = 8;

ImageModel generator_image_model(const Generator<float>& gen,
                                 const GeneratorOptions& options = {});
// The generator's blended masks from its last normalization layer.
MaskModel generator_mask_model(const Generator<float>& gen,
                               const GeneratorOptions& options = {});
// Emits the sample's ground-truth masks (background mask all ones).
MaskModel oracle_mask_model();
// Emits every instance's box filled with ones.
MaskModel full_box_mask_model();

// Per-stage feature distance with unit-normalized channel vectors, averaged
// over positions and stages. Inputs are [3 x H x W] or [1 x 3 x H x W].
double diversity_proxy(const Tensor<float>& a, const Tensor<float>& b,
                       const FeatureExtractor<float>& extractor);

struct DiversityResult {
  double mean = 0;
  double std = 0;                  // over layouts
  std::vector<double> per_layout;  // mean pairwise distance per layout
};

// k style draws per layout; draw j of layout l uses seed
// split_seed(split_seed(seed, l), j). Throws ContractError when k < 2.
DiversityResult diversity_score(const ImageModel& model, std::span<const Layout> layouts,
                                std::size_t k, std::uint64_t seed, std::size_t d_img,
                                std::size_t d_obj, const FeatureExtractor<float>& extractor);

// Binarizes both masks at `threshold` and returns intersection / union; two
// empty masks give 1.
double mask_iou(std::span<const float> a, std::span<const float> b, double threshold = 0.5);

// Crops an [H x W] plane to `rect` and bilinearly resizes it to size x size.
std::vector<float> crop_resize(std::span<const float> plane, std::size_t height,
                               std::size_t width, const PixelRect& rect, std::size_t size);

inline constexpr std::size_t kIouCropSize = 32;

struct CategoryIou {
  std::string category;
  double mean_iou = 0;
  std::size_t instances = 0;
};

struct MeanIouReport {
  std::vector<CategoryIou> per_category;  // foreground categories, label order
  double mean_iou = 0;                    // over all instances
  std::size_t instances = 0;
};

// Compares each foreground instance's mask with its ground truth after
// cropping both to the instance box and resizing to 32 x 32. Sample i is
// synthesized with styles seeded by split_seed(seed, sample id).
MeanIouReport mean_iou_report(const MaskModel& model, const Dataset& dataset,
                              std::uint64_t seed, std::size_t d_img, std::size_t d_obj);

// Mean per-pixel L1 between synthesized and real images, averaged over the
// dataset, with the same style seeding as mean_iou_report.
double reconstruction_l1(const ImageModel& model, const Dataset& dataset,
                         std::uint64_t seed, std::size_t d_img, std::size_t d_obj);

struct LocalityReport {
  std::size_t instance = 0;  // foreground index
  // With alpha forced to zero: resampling the instance's style code leaves
  // every other instance's masks bit-identical.
  bool object_resample_exact = false;
  // With alpha forced to zero: resampling the image code leaves every
  // instance mask bit-identical.
  bool image_resample_exact = false;
  // Full model, object resample: mean absolute pixel change inside and
  // outside the instance box, and the share of the total change inside.
  double change_inside = 0;
  double change_outside = 0;
  double inside_fraction = 0;
};

LocalityReport locality_probe(const Generator<float>& gen, const Layout& layout,
                              std::size_t instance, std::uint64_t seed,
                              std::uint64_t resample_seed);

struct LayoutEdit {
  enum class Kind { kIdentity, kMove, kResize, kRelabel, kAdd };
  Kind kind = Kind::kIdentity;
  std::size_t instance = 0;  // foreground index; ignored by kIdentity/kAdd
  Box box;                   // new box for kMove/kResize/kAdd
  std::size_t label = 0;     // new label for kRelabel/kAdd
  std::uint64_t new_seed = 0;  // style seed of an added instance
};

Layout apply_edit(const Layout& layout, const LayoutEdit& edit);

struct LayoutProbeReport {
  bool images_identical = false;
  // Mean IoU of the unedited instances' final masks before vs after.
  double unedited_mask_iou = 1;
  // Generated shape masks of unedited instances bit-identical (alpha = 0).
  bool unedited_shape_masks_exact = false;
  // Edited instance: box center and mask centroid displacement in pixels
  // (x, y); zero for identity and add edits.
  std::array<double, 2> box_shift{0, 0};
  std::array<double, 2> mask_shift{0, 0};
};

LayoutProbeReport layout_probe(const Generator<float>& gen, const Layout& layout,
                               const LayoutEdit& edit, std::uint64_t seed);

// Grid of rows {layout boxes, label map, image, ground truth}; tiles are
// R x R with a 2-pixel gutter.
struct ContactRow {
  Layout layout;  // foreground boxes
  std::vector<std::int32_t> label_map;
  Image8 image;
  Image8 ground_truth;
};
Image8 contact_sheet(std::span<const ContactRow> rows, std::size_t resolution);
Image8 draw_layout(const Layout& layout, std::size_t resolution);

inline constexpr const char* kNotAvailableClassifier = "N/A (requires pretrained classifier)";

struct EvalReport {
  std::string config_json;  // run configuration, echoed verbatim
  std::string model;        // "generator" or "oracle"
  std::optional<double> reconstruction_l1;
  MeanIouReport iou;
  std::optional<DiversityResult> diversity;
  std::size_t diversity_layouts = 0;
  std::size_t diversity_styles = 0;
  std::vector<LocalityReport> locality;
};

std::string report_json(const EvalReport& report);

}  // namespace layoutsynth
