#include "layoutsynth/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>

namespace layoutsynth {
namespace {

png_uint_32 png_format(std::size_t channels) {
  switch (channels) {
    case 1: return PNG_FORMAT_GRAY;
    case 3: return PNG_FORMAT_RGB;
    default: throw ImageIoError("unsupported channel count " + std::to_string(channels));
  }
}

}  // namespace

std::vector<std::uint8_t> encode_png(const Image8& image) {
  if (image.pixels.size() != image.width * image.height * image.channels ||
      image.width == 0 || image.height == 0) {
    throw ImageIoError("encode_png: pixel buffer does not match the image size");
  }
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(image.width);
  png.height = static_cast<png_uint_32>(image.height);
  png.format = png_format(image.channels);
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&png, nullptr, &size, 0, image.pixels.data(), 0, nullptr)) {
    throw ImageIoError(std::string("encode_png: ") + png.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&png, out.data(), &size, 0, image.pixels.data(), 0,
                                 nullptr)) {
    throw ImageIoError(std::string("encode_png: ") + png.message);
  }
  out.resize(size);
  return out;
}

Image8 decode_png(const std::vector<std::uint8_t>& bytes) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&png, bytes.data(), bytes.size())) {
    throw ImageIoError(std::string("decode_png: ") + png.message);
  }
  Image8 img;
  const bool gray = (png.format & PNG_FORMAT_FLAG_COLOR) == 0;
  png.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  img.width = png.width;
  img.height = png.height;
  img.channels = gray ? 1 : 3;
  img.pixels.resize(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, img.pixels.data(), 0, nullptr)) {
    png_image_free(&png);
    throw ImageIoError(std::string("decode_png: ") + png.message);
  }
  return img;
}

void write_png(const std::string& path, const Image8& image) {
  const auto bytes = encode_png(image);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ImageIoError("cannot open " + path + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
  if (!f) throw ImageIoError("failed writing " + path);
}

Image8 read_png(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ImageIoError("cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
  try {
    return decode_png(bytes);
  } catch (const ImageIoError& e) {
    throw ImageIoError(path + ": " + e.what());
  }
}

std::uint8_t to_byte(double v) {
  const double b = std::round((std::clamp(v, -1.0, 1.0) + 1.0) * 127.5);
  return static_cast<std::uint8_t>(b);
}

double from_byte(std::uint8_t b) { return static_cast<double>(b) / 127.5 - 1.0; }

template <std::floating_point T>
Image8 tensor_to_rgb(const Tensor<T>& batch, std::size_t index) {
  if (batch.rank() != 4 || batch.dim(1) != 3 || index >= batch.dim(0)) {
    throw DimensionError("tensor_to_rgb: expected [N x 3 x H x W], got " +
                         to_string(batch.shape()));
  }
  const std::size_t h = batch.dim(2), w = batch.dim(3), hw = h * w;
  Image8 img{w, h, 3, std::vector<std::uint8_t>(hw * 3)};
  const auto d = batch.data();
  const std::size_t base = index * 3 * hw;
  for (std::size_t p = 0; p < hw; ++p)
    for (std::size_t c = 0; c < 3; ++c) img.pixels[p * 3 + c] = to_byte(d[base + c * hw + p]);
  return img;
}

template <std::floating_point T>
Tensor<T> rgb_to_tensor(const Image8& image) {
  if (image.channels != 3) throw ImageIoError("rgb_to_tensor: expected an RGB image");
  const std::size_t hw = image.width * image.height;
  std::vector<T> d(3 * hw);
  for (std::size_t p = 0; p < hw; ++p)
    for (std::size_t c = 0; c < 3; ++c)
      d[c * hw + p] = static_cast<T>(from_byte(image.pixels[p * 3 + c]));
  return Tensor<T>(Shape{3, image.height, image.width}, std::move(d));
}

template <std::floating_point T>
Image8 mask_to_gray(const Tensor<T>& mask) {
  if (mask.rank() != 2) {
    throw DimensionError("mask_to_gray: expected [H x W], got " + to_string(mask.shape()));
  }
  Image8 img{mask.dim(1), mask.dim(0), 1, std::vector<std::uint8_t>(mask.numel())};
  const auto d = mask.data();
  for (std::size_t p = 0; p < d.size(); ++p) {
    img.pixels[p] = static_cast<std::uint8_t>(
        std::round(std::clamp(static_cast<double>(d[p]), 0.0, 1.0) * 255.0));
  }
  return img;
}

std::array<std::uint8_t, 3> palette_color(std::size_t label) {
  static constexpr std::array<std::array<std::uint8_t, 3>, 10> kPalette = {{
      {40, 40, 40},    {220, 60, 60},  {60, 180, 75},  {70, 110, 220}, {240, 200, 40},
      {160, 80, 200},  {70, 200, 200}, {240, 130, 40}, {200, 200, 200}, {120, 70, 40},
  }};
  return kPalette[label % kPalette.size()];
}

Image8 label_map_to_rgb(const std::vector<std::int32_t>& labels, std::size_t height,
                        std::size_t width) {
  if (labels.size() != height * width) {
    throw DimensionError("label_map_to_rgb: label count does not match the lattice");
  }
  Image8 img{width, height, 3, std::vector<std::uint8_t>(labels.size() * 3)};
  for (std::size_t p = 0; p < labels.size(); ++p) {
    const auto c = palette_color(static_cast<std::size_t>(std::max(labels[p], 0)));
    std::copy(c.begin(), c.end(), img.pixels.begin() + static_cast<std::ptrdiff_t>(p * 3));
  }
  return img;
}

template Image8 tensor_to_rgb(const Tensor<float>&, std::size_t);
template Image8 tensor_to_rgb(const Tensor<double>&, std::size_t);
template Tensor<float> rgb_to_tensor<float>(const Image8&);
template Tensor<double> rgb_to_tensor<double>(const Image8&);
template Image8 mask_to_gray(const Tensor<float>&);
template Image8 mask_to_gray(const Tensor<double>&);

}  // namespace layoutsynth
