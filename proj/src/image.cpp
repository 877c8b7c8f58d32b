#include "rpsm/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace rpsm {

double Image::sample(std::size_t c, double y, double x) const {
  const double fy = std::floor(y), fx = std::floor(x);
  const double wy = y - fy, wx = x - fx;
  const auto y0 = static_cast<std::ptrdiff_t>(fy), x0 = static_cast<std::ptrdiff_t>(fx);
  auto px = [&](std::ptrdiff_t yy, std::ptrdiff_t xx) {
    if (yy < 0 || xx < 0 || yy >= static_cast<std::ptrdiff_t>(height) || xx >= static_cast<std::ptrdiff_t>(width)) {
      return 0.0;
    }
    return at(c, static_cast<std::size_t>(yy), static_cast<std::size_t>(xx));
  };
  return (1 - wy) * ((1 - wx) * px(y0, x0) + wx * px(y0, x0 + 1)) +
         wy * ((1 - wx) * px(y0 + 1, x0) + wx * px(y0 + 1, x0 + 1));
}

void write_ppm(const std::filesystem::path& path, const Image& image) {
  if (image.channels != 3) throw std::invalid_argument("write_ppm: expected 3 channels, got " + std::to_string(image.channels));
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write image: " + path.string());
  out << "P6\n" << image.width << ' ' << image.height << "\n255\n";
  std::vector<unsigned char> bytes(image.height * image.width * 3);
  for (std::size_t y = 0; y < image.height; ++y) {
    for (std::size_t x = 0; x < image.width; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = std::clamp(image.at(c, y, x), 0.0, 1.0);
        bytes[(y * image.width + x) * 3 + c] = static_cast<unsigned char>(std::lround(v * 255.0));
      }
    }
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing image: " + path.string());
}

Image read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read image: " + path.string());
  std::string magic;
  std::size_t width = 0, height = 0, maxval = 0;
  in >> magic >> width >> height >> maxval;
  if (magic != "P6" || width == 0 || height == 0 || maxval != 255) {
    throw std::runtime_error("unsupported image format (need binary P6 with maxval 255): " + path.string());
  }
  in.get();  // single whitespace before the raster
  std::vector<unsigned char> bytes(width * height * 3);
  if (!in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()))) {
    throw std::runtime_error("truncated image: " + path.string());
  }
  Image image(3, height, width);
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      for (std::size_t c = 0; c < 3; ++c) image.at(c, y, x) = bytes[(y * width + x) * 3 + c] / 255.0;
    }
  }
  return image;
}

Image quantize8(const Image& image) {
  Image out = image;
  for (auto& v : out.data) v = static_cast<double>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)) / 255.0;
  return out;
}

Image crop_resize(const Image& image, const CropBox& box, std::size_t extent) {
  if (box.side <= 0.0 || extent == 0) throw std::invalid_argument("crop_resize: empty crop");
  Image out(image.channels, extent, extent);
  const double step = box.side / static_cast<double>(extent);
  constexpr double kTaps[2] = {0.25, 0.75};
  for (std::size_t c = 0; c < image.channels; ++c) {
    for (std::size_t y = 0; y < extent; ++y) {
      for (std::size_t x = 0; x < extent; ++x) {
        double acc = 0.0;
        for (double ty : kTaps) {
          for (double tx : kTaps) {
            // Continuous source position; pixel centers sit at integer + 0.5.
            const double sy = box.y0 + (static_cast<double>(y) + ty) * step - 0.5;
            const double sx = box.x0 + (static_cast<double>(x) + tx) * step - 0.5;
            acc += image.sample(c, sy, sx);
          }
        }
        out.at(c, y, x) = acc / 4.0;
      }
    }
  }
  return out;
}

Image scale_about_center(const Image& image, double factor) {
  if (!(factor > 0.0)) throw std::invalid_argument("scale_about_center: factor must be positive");
  if (factor == 1.0) return image;
  Image out(image.channels, image.height, image.width);
  const double cy = image.height / 2.0, cx = image.width / 2.0;
  for (std::size_t c = 0; c < image.channels; ++c) {
    for (std::size_t y = 0; y < image.height; ++y) {
      for (std::size_t x = 0; x < image.width; ++x) {
        const double sy = cy + (static_cast<double>(y) + 0.5 - cy) / factor - 0.5;
        const double sx = cx + (static_cast<double>(x) + 0.5 - cx) / factor - 0.5;
        out.at(c, y, x) = image.sample(c, sy, sx);
      }
    }
  }
  return out;
}

Tensor to_tensor(const std::vector<Image>& frames) {
  if (frames.empty()) throw std::invalid_argument("to_tensor: no frames");
  const auto& f = frames.front();
  std::vector<double> values;
  values.reserve(frames.size() * f.data.size());
  for (const auto& frame : frames) {
    if (frame.channels != f.channels || frame.height != f.height || frame.width != f.width) {
      throw ShapeError("to_tensor: frames differ in extent");
    }
    values.insert(values.end(), frame.data.begin(), frame.data.end());
  }
  return Tensor::from({frames.size(), f.channels, f.height, f.width}, std::move(values));
}

Image frame_from_tensor(const Tensor& frames, std::size_t index) {
  if (frames.rank() != 4 || index >= frames.dim(0)) {
    throw ShapeError("frame_from_tensor: index " + std::to_string(index) + " invalid for " + shape_string(frames.shape()));
  }
  Image image(frames.dim(1), frames.dim(2), frames.dim(3));
  const auto begin = frames.data().begin() + static_cast<std::ptrdiff_t>(index * image.data.size());
  std::copy(begin, begin + static_cast<std::ptrdiff_t>(image.data.size()), image.data.begin());
  return image;
}

}  // namespace rpsm
