#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "irismatch/tensor.hpp"

namespace irismatch {

/// Grayscale raster, row-major; values in source units (e.g. 0..255).
struct GrayImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> pixels;

  GrayImage() = default;
  GrayImage(std::size_t h, std::size_t w, double fill = 0.0) : height(h), width(w), pixels(h * w, fill) {}

  double& at(std::size_t row, std::size_t col) { return pixels[row * width + col]; }
  double at(std::size_t row, std::size_t col) const { return pixels[row * width + col]; }
};

inline constexpr std::size_t kNormalizedHeight = 110;
inline constexpr std::size_t kNormalizedWidth = 512;

/// Polar-unwrapped iris: rows run from the pupil boundary (row 0) to the iris
/// boundary (last row); columns cover [0, 2*pi) uniformly. Values in [0, 1].
struct NormalizedIris {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> pixels;

  NormalizedIris() = default;
  NormalizedIris(std::size_t h, std::size_t w, double fill = 0.0) : height(h), width(w), pixels(h * w, fill) {}

  double& at(std::size_t row, std::size_t col) { return pixels[row * width + col]; }
  double at(std::size_t row, std::size_t col) const { return pixels[row * width + col]; }

  friend bool operator==(const NormalizedIris&, const NormalizedIris&) = default;
};

/// Stacks same-shaped irises into a [B,1,H,W] tensor.
inline Tensor to_tensor(const std::vector<const NormalizedIris*>& images) {
  if (images.empty()) throw ShapeError("to_tensor: no images");
  const std::size_t H = images.front()->height, W = images.front()->width;
  std::vector<double> values;
  values.reserve(images.size() * H * W);
  for (const NormalizedIris* img : images) {
    if (img->height != H || img->width != W) {
      throw ShapeError("to_tensor: images differ in shape (" + std::to_string(img->height) + "x" +
                       std::to_string(img->width) + " vs " + std::to_string(H) + "x" +
                       std::to_string(W) + ")");
    }
    values.insert(values.end(), img->pixels.begin(), img->pixels.end());
  }
  return Tensor({images.size(), 1, H, W}, std::move(values));
}

inline Tensor to_tensor(const NormalizedIris& image) { return to_tensor(std::vector{&image}); }

}  // namespace irismatch
