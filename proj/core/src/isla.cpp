#include "layoutsynth/isla.hpp"

#include "layoutsynth/ops.hpp"

namespace layoutsynth {

template <std::floating_point T>
Tensor<T> one_hot_labels(const Layout& layout, std::size_t num_categories) {
  const std::size_t m = layout.instance_count();
  Tensor<T> out(Shape{m, num_categories});
  auto d = out.mutable_data();
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t label = layout.boxes[i].label;
    if (label >= num_categories) {
      throw ContractError("one_hot_labels: label " + std::to_string(label) +
                          " out of range");
    }
    d[i * num_categories + label] = T(1);
  }
  return out;
}

template <std::floating_point T>
Tensor<T> embed_labels(const Layout& layout, const Tensor<T>& embedding) {
  return matmul(one_hot_labels<T>(layout, embedding.dim(0)), embedding);
}

template <std::floating_point T>
Tensor<T> object_codes(const StyleCodes& styles) {
  std::vector<T> d(styles.z_obj.begin(), styles.z_obj.end());
  return Tensor<T>(Shape{styles.instances(), styles.d_obj}, std::move(d));
}

template <std::floating_point T>
Tensor<T> image_code(const StyleCodes& styles) {
  std::vector<T> d(styles.z_img.begin(), styles.z_img.end());
  return Tensor<T>(Shape{1, styles.d_img}, std::move(d));
}

template <std::floating_point T>
Tensor<T> joint_encode(const Tensor<T>& label_embedding, const Tensor<T>& z_obj) {
  if (label_embedding.rank() != 2 || z_obj.rank() != 2 ||
      label_embedding.dim(0) != z_obj.dim(0)) {
    throw DimensionError("joint_encode: " + to_string(label_embedding.shape()) +
                         " vs " + to_string(z_obj.shape()));
  }
  return concat<T>({label_embedding, z_obj}, 1);
}

template <std::floating_point T>
Tensor<T> place_masks(const Tensor<T>& masks, const Layout& layout,
                      std::size_t height, std::size_t width) {
  const std::size_t m = layout.instance_count();
  if (masks.rank() != 3 || masks.dim(0) != m) {
    throw DimensionError("place_masks: masks " + to_string(masks.shape()) + " for " +
                         std::to_string(m) + " instances");
  }
  const std::size_t s0 = masks.dim(1), s1 = masks.dim(2);
  std::vector<Tensor<T>> placed;
  placed.reserve(m);
  for (std::size_t i = 0; i < m; ++i) {
    const PixelRect r = box_to_pixels(layout.boxes[i].box, height, width);
    Tensor<T> one = reshape(slice(masks, 0, i, i + 1), Shape{1, s0, s1});
    one = bilinear_resize(one, r.height(), r.width());
    placed.push_back(pad2d(one, height, width, r.r0, r.c0));
  }
  return concat<T>(std::span<const Tensor<T>>(placed), 0);
}

template <std::floating_point T>
Tensor<T> clip_to_boxes(const Tensor<T>& masks, const Layout& layout) {
  const std::size_t m = layout.instance_count();
  if (masks.rank() != 3 || masks.dim(0) != m) {
    throw DimensionError("clip_to_boxes: masks " + to_string(masks.shape()) + " for " +
                         std::to_string(m) + " instances");
  }
  const std::size_t h = masks.dim(1), w = masks.dim(2);
  Tensor<T> indicator(masks.shape());
  auto d = indicator.mutable_data();
  for (std::size_t i = 0; i < m; ++i) {
    const PixelRect r = box_to_pixels(layout.boxes[i].box, h, w);
    for (std::size_t y = r.r0; y < r.r1; ++y)
      for (std::size_t x = r.c0; x < r.c1; ++x) d[(i * h + y) * w + x] = T(1);
  }
  return mul(masks, indicator);
}

template <std::floating_point T>
Tensor<T> to_label_map(const Tensor<T>& features, const Tensor<T>& kernel,
                       const Tensor<T>& bias) {
  return sigmoid(add(conv2d(features, kernel, 1, kernel.dim(2) / 2), bias));
}

template <std::floating_point T>
Tensor<T> instance_masks_from_label_map(const Tensor<T>& label_map,
                                        const Layout& layout) {
  if (label_map.rank() != 3) {
    throw DimensionError("instance_masks_from_label_map: label map must be rank 3, got " +
                         to_string(label_map.shape()));
  }
  std::vector<Tensor<T>> rows;
  for (const auto& b : layout.boxes) {
    if (b.label >= label_map.dim(0)) {
      throw ContractError("instance_masks_from_label_map: label out of range");
    }
    rows.push_back(slice(label_map, 0, b.label, b.label + 1));
  }
  return clip_to_boxes(concat<T>(std::span<const Tensor<T>>(rows), 0), layout);
}

template <std::floating_point T>
FeatureMasks<T> masks_from_features(const Tensor<T>& features, const Tensor<T>& kernel,
                                    const Tensor<T>& bias, const Layout& layout) {
  if (features.rank() != 3) {
    throw DimensionError("masks_from_features: features must be [C x H x W], got " +
                         to_string(features.shape()));
  }
  Shape batched{1, features.dim(0), features.dim(1), features.dim(2)};
  Tensor<T> map = to_label_map(reshape(features, batched), kernel, bias);
  map = reshape(map, Shape{map.dim(1), map.dim(2), map.dim(3)});
  return {map, instance_masks_from_label_map(map, layout)};
}

template <std::floating_point T>
Tensor<T> affine_table(const Tensor<T>& joint, const Tensor<T>& projection) {
  return matmul(joint, projection);
}

template <std::floating_point T>
Tensor<T> blend_masks(const Tensor<T>& shape_masks, const Tensor<T>& feature_masks,
                      const Tensor<T>& alpha) {
  return blend(shape_masks, feature_masks, alpha);
}

template <std::floating_point T>
AffineField<T> compose_isla(const Tensor<T>& masks, const Tensor<T>& table,
                            const Layout& layout) {
  if (masks.rank() != 3 || table.rank() != 2 || table.dim(1) % 2 != 0 ||
      masks.dim(0) != table.dim(0) || masks.dim(0) != layout.instance_count()) {
    throw DimensionError("compose_isla: masks " + to_string(masks.shape()) +
                         ", table " + to_string(table.shape()) + ", " +
                         std::to_string(layout.instance_count()) + " instances");
  }
  const std::size_t c = table.dim(1) / 2;
  const auto occ = occupancy_map(layout, masks.dim(1), masks.dim(2));
  const Tensor<T> beta_rows = slice(table, 1, 0, c);
  const Tensor<T> gamma_rows = slice(table, 1, c, 2 * c);
  return {masked_affine_field(masks, gamma_rows, occ),
          masked_affine_field(masks, beta_rows, occ)};
}

template <std::floating_point T>
Tensor<T> isla_apply(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta) {
  return add(mul(standardize(x), gamma), beta);
}

template <std::floating_point T>
std::vector<std::int32_t> argmax_label_map(const Tensor<T>& stack) {
  if (stack.rank() != 3 || stack.dim(0) == 0) {
    throw DimensionError("argmax_label_map: expected non-empty [m x H x W], got " +
                         to_string(stack.shape()));
  }
  const std::size_t m = stack.dim(0), hw = stack.dim(1) * stack.dim(2);
  const auto d = stack.data();
  std::vector<std::int32_t> out(hw, 0);
  for (std::size_t p = 0; p < hw; ++p) {
    T best = d[p];
    for (std::size_t i = 1; i < m; ++i) {
      if (d[i * hw + p] > best) {
        best = d[i * hw + p];
        out[p] = static_cast<std::int32_t>(i);
      }
    }
  }
  return out;
}

template <std::floating_point T>
std::vector<std::int32_t> instance_label_map(const Tensor<T>& stack,
                                             const Layout& layout) {
  if (stack.rank() != 3 || stack.dim(0) != layout.instance_count()) {
    throw DimensionError("instance_label_map: stack " + to_string(stack.shape()) +
                         " for " + std::to_string(layout.instance_count()) +
                         " instances");
  }
  auto out = argmax_label_map(stack);
  for (auto& v : out) v = static_cast<std::int32_t>(layout.boxes[v].label);
  return out;
}

#define LAYOUTSYNTH_INSTANTIATE_ISLA(T)                                                \
  template Tensor<T> one_hot_labels<T>(const Layout&, std::size_t);                    \
  template Tensor<T> embed_labels(const Layout&, const Tensor<T>&);                    \
  template Tensor<T> object_codes<T>(const StyleCodes&);                               \
  template Tensor<T> image_code<T>(const StyleCodes&);                                 \
  template Tensor<T> joint_encode(const Tensor<T>&, const Tensor<T>&);                 \
  template Tensor<T> place_masks(const Tensor<T>&, const Layout&, std::size_t,         \
                                 std::size_t);                                         \
  template Tensor<T> clip_to_boxes(const Tensor<T>&, const Layout&);                   \
  template Tensor<T> to_label_map(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&); \
  template Tensor<T> instance_masks_from_label_map(const Tensor<T>&, const Layout&);   \
  template FeatureMasks<T> masks_from_features(const Tensor<T>&, const Tensor<T>&,     \
                                               const Tensor<T>&, const Layout&);       \
  template Tensor<T> affine_table(const Tensor<T>&, const Tensor<T>&);                 \
  template Tensor<T> blend_masks(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&); \
  template AffineField<T> compose_isla(const Tensor<T>&, const Tensor<T>&,             \
                                       const Layout&);                                 \
  template Tensor<T> isla_apply(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&); \
  template std::vector<std::int32_t> argmax_label_map(const Tensor<T>&);          \
  template std::vector<std::int32_t> instance_label_map(const Tensor<T>&, const Layout&);

LAYOUTSYNTH_INSTANTIATE_ISLA(float)
LAYOUTSYNTH_INSTANTIATE_ISLA(double)

}  // namespace layoutsynth
