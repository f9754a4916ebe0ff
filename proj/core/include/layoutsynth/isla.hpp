#pragma once

#include <cstdint>
#include <vector>

#include "layoutsynth/layout.hpp"
#include "layoutsynth/tensor.hpp"

namespace layoutsynth {

// One-hot label rows [m' x d_l] of a layout (constant tensor).
template <std::floating_point T>
Tensor<T> one_hot_labels(const Layout& layout, std::size_t num_categories);

// Label embedding Y = one_hot(labels) . W, W being [d_l x d_e].
template <std::floating_point T>
Tensor<T> embed_labels(const Layout& layout, const Tensor<T>& embedding);

// Instance latent rows [m' x d_obj] and the image latent [1 x d_img].
template <std::floating_point T>
Tensor<T> object_codes(const StyleCodes& styles);
template <std::floating_point T>
Tensor<T> image_code(const StyleCodes& styles);

// Joint label-style encoding S = [Y, Z_obj] of shape [m' x (d_e + d_obj)].
template <std::floating_point T>
Tensor<T> joint_encode(const Tensor<T>& label_embedding, const Tensor<T>& z_obj);

// Resizes each per-instance mask [m' x s x s] into its box's pixel rect on an
// H x W lattice (bilinear), zero outside the rect.
template <std::floating_point T>
Tensor<T> place_masks(const Tensor<T>& masks, const Layout& layout,
                      std::size_t height, std::size_t width);

// Zeroes every slice of masks [m' x H x W] outside its instance's pixel rect.
template <std::floating_point T>
Tensor<T> clip_to_boxes(const Tensor<T>& masks, const Layout& layout);

// ToMask head: sigmoid(conv3x3(features) + bias) giving a d_l-channel label
// map per sample, features [N x C x H x W], kernel [d_l x C x 3 x 3].
template <std::floating_point T>
Tensor<T> to_label_map(const Tensor<T>& features, const Tensor<T>& kernel,
                       const Tensor<T>& bias);

// Instance masks read off a label map [d_l x H x W]: instance i takes the
// channel of its label, clipped to its box. Two instances with the same label
// read the same channel.
template <std::floating_point T>
Tensor<T> instance_masks_from_label_map(const Tensor<T>& label_map,
                                        const Layout& layout);

template <std::floating_point T>
struct FeatureMasks {
  Tensor<T> label_map;  // [d_l x H x W]
  Tensor<T> instances;  // [m' x H x W]
};

// Feature-derived masks for one sample's features [C x H x W].
template <std::floating_point T>
FeatureMasks<T> masks_from_features(const Tensor<T>& features,
                                    const Tensor<T>& kernel, const Tensor<T>& bias,
                                    const Layout& layout);

// Per-instance affine table S . A, [m' x 2C]; columns [0, C) hold beta and
// [C, 2C) hold gamma.
template <std::floating_point T>
Tensor<T> affine_table(const Tensor<T>& joint, const Tensor<T>& projection);

// (1 - alpha) * shape_masks + alpha * feature_masks.
template <std::floating_point T>
Tensor<T> blend_masks(const Tensor<T>& shape_masks, const Tensor<T>& feature_masks,
                      const Tensor<T>& alpha);

template <std::floating_point T>
struct AffineField {
  Tensor<T> gamma;  // [C x H x W]
  Tensor<T> beta;   // [C x H x W]
};

// Spreads the affine table over the lattice through the masks [m' x H x W];
// pixels covered by several boxes are divided by the summed mask value.
template <std::floating_point T>
AffineField<T> compose_isla(const Tensor<T>& masks, const Tensor<T>& table,
                            const Layout& layout);

// gamma * standardize(x) + beta with batch statistics over all of x
// [N x C x H x W]; gamma and beta are [N x C x H x W].
template <std::floating_point T>
Tensor<T> isla_apply(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta);

// Per-pixel index of the largest slice of stack [m x H x W]; ties go to the
// lowest index.
template <std::floating_point T>
std::vector<std::int32_t> argmax_label_map(const Tensor<T>& stack);

// Category label map from an instance mask stack [m' x H x W]: each pixel
// takes the label of its argmax instance.
template <std::floating_point T>
std::vector<std::int32_t> instance_label_map(const Tensor<T>& stack,
                                             const Layout& layout);

}  // namespace layoutsynth
