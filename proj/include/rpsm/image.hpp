#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

#include "rpsm/tensor.hpp"

namespace rpsm {

/// Planar channels × height × width image, values nominally in [0, 1].
struct Image {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> data;

  Image() = default;
  Image(std::size_t c, std::size_t h, std::size_t w) : channels(c), height(h), width(w), data(c * h * w, 0.0) {}

  double& at(std::size_t c, std::size_t y, std::size_t x) { return data[(c * height + y) * width + x]; }
  double at(std::size_t c, std::size_t y, std::size_t x) const { return data[(c * height + y) * width + x]; }
  /// Bilinear sample at continuous index coordinates; zero outside.
  double sample(std::size_t c, double y, double x) const;

  bool operator==(const Image&) const = default;
};

/// Binary PPM (P6, maxval 255). Three-channel images only; values are
/// clamped to [0, 1] and rounded to 8 bits.
void write_ppm(const std::filesystem::path& path, const Image& image);
Image read_ppm(const std::filesystem::path& path);
/// Applies the same 8-bit rounding that write_ppm stores.
Image quantize8(const Image& image);

/// Square region in source pixel units; (x0, y0) is the top-left corner.
struct CropBox {
  double x0 = 0.0;
  double y0 = 0.0;
  double side = 0.0;
};

/// Resamples a square region into extent × extent. Each output pixel averages
/// a 2×2 grid of bilinear taps so downscaling thin strokes does not alias.
Image crop_resize(const Image& image, const CropBox& box, std::size_t extent);

/// Rescales about the image center by `factor` (content grows for factor > 1),
/// keeping the extent; uncovered pixels become zero.
Image scale_about_center(const Image& image, double factor);

Tensor to_tensor(const std::vector<Image>& frames);
Image frame_from_tensor(const Tensor& frames, std::size_t index);

}  // namespace rpsm
