#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "layoutsynth/tensor.hpp"

namespace layoutsynth {

class ImageIoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// 8-bit interleaved image, row-major [height x width x channels] with
// channels 1 (gray) or 3 (RGB).
struct Image8 {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 0;
  std::vector<std::uint8_t> pixels;
  bool operator==(const Image8&) const = default;
};

std::vector<std::uint8_t> encode_png(const Image8& image);
Image8 decode_png(const std::vector<std::uint8_t>& bytes);
void write_png(const std::string& path, const Image8& image);
Image8 read_png(const std::string& path);

// Maps [-1, 1] linearly onto [0, 255] with rounding; values are clamped.
std::uint8_t to_byte(double v);
double from_byte(std::uint8_t b);

// Image i of a batch [N x 3 x H x W] in [-1, 1] as an RGB image.
template <std::floating_point T>
Image8 tensor_to_rgb(const Tensor<T>& batch, std::size_t index);

// RGB image to a [3 x H x W] tensor in [-1, 1].
template <std::floating_point T>
Tensor<T> rgb_to_tensor(const Image8& image);

// Soft mask [H x W] in [0, 1] as a gray image (0 -> 0, 1 -> 255).
template <std::floating_point T>
Image8 mask_to_gray(const Tensor<T>& mask);

// Integer label map rendered with the fixed category palette.
Image8 label_map_to_rgb(const std::vector<std::int32_t>& labels, std::size_t height,
                        std::size_t width);

// Fixed category colors (index 0 = background); wraps around past the end.
std::array<std::uint8_t, 3> palette_color(std::size_t label);

}  // namespace layoutsynth
