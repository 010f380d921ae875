#pragma once

// Rubber-sheet unwrapping of the iris annulus into a polar image, and
// vertical resampling of polar images.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <stdexcept>
#include <string>

#include "irismatch/image.hpp"

namespace irismatch {

struct Circle {
  double x = 0.0;  // column, pixels
  double y = 0.0;  // row, pixels
  double radius = 0.0;
};

/// Segmentation result consumed by the unwrapping: pupil and iris boundaries.
struct EyeCircles {
  Circle pupil;
  Circle iris;

  void validate() const {
    if (!(pupil.radius > 0.0) || !(iris.radius > 0.0)) {
      throw std::invalid_argument("EyeCircles: radii must be positive");
    }
    if (pupil.radius >= iris.radius) {
      throw std::invalid_argument("EyeCircles: pupil radius must be smaller than iris radius");
    }
    const double offset = std::hypot(pupil.x - iris.x, pupil.y - iris.y);
    if (offset + pupil.radius > iris.radius) {
      throw std::invalid_argument("EyeCircles: pupil disc is not contained in the iris disc");
    }
  }
};

/// Bilinear sample with edge clamping; (x, y) = (column, row).
inline double sample_bilinear(const GrayImage& img, double x, double y) {
  x = std::clamp(x, 0.0, static_cast<double>(img.width - 1));
  y = std::clamp(y, 0.0, static_cast<double>(img.height - 1));
  const auto x0 = static_cast<std::size_t>(std::floor(x));
  const auto y0 = static_cast<std::size_t>(std::floor(y));
  const std::size_t x1 = std::min(x0 + 1, img.width - 1);
  const std::size_t y1 = std::min(y0 + 1, img.height - 1);
  const double fx = x - static_cast<double>(x0), fy = y - static_cast<double>(y0);
  const double top = img.at(y0, x0) * (1.0 - fx) + img.at(y0, x1) * fx;
  const double bottom = img.at(y1, x0) * (1.0 - fx) + img.at(y1, x1) * fx;
  return top * (1.0 - fy) + bottom * fy;
}

/// Min-max rescale to [0, 1]; a constant image maps to zeros.
inline void rescale_unit_range(NormalizedIris& img) {
  if (img.pixels.empty()) return;
  const auto [lo, hi] = std::minmax_element(img.pixels.begin(), img.pixels.end());
  const double low = *lo, span = *hi - *lo;
  for (double& v : img.pixels) v = span > 0.0 ? (v - low) / span : 0.0;
}

/// Pixel (i, j) samples the point at radial fraction i/(H-1) on the segment
/// from the pupil boundary to the iris boundary along angle 2*pi*j/W.
inline NormalizedIris rubber_sheet(const GrayImage& image, const EyeCircles& circles,
                                   std::size_t height = kNormalizedHeight,
                                   std::size_t width = kNormalizedWidth) {
  circles.validate();
  if (height < 2 || width < 1) throw std::invalid_argument("rubber_sheet: output must be at least 2x1");
  if (image.width == 0 || image.height == 0) throw std::invalid_argument("rubber_sheet: empty image");
  const Circle& ir = circles.iris;
  if (ir.x - ir.radius < 0.0 || ir.y - ir.radius < 0.0 ||
      ir.x + ir.radius > static_cast<double>(image.width - 1) ||
      ir.y + ir.radius > static_cast<double>(image.height - 1)) {
    throw std::invalid_argument("rubber_sheet: iris circle extends outside the image");
  }
  NormalizedIris out(height, width);
  for (std::size_t j = 0; j < width; ++j) {
    const double theta = 2.0 * std::numbers::pi * static_cast<double>(j) / static_cast<double>(width);
    const double c = std::cos(theta), s = std::sin(theta);
    const double px = circles.pupil.x + circles.pupil.radius * c;
    const double py = circles.pupil.y + circles.pupil.radius * s;
    const double qx = ir.x + ir.radius * c;
    const double qy = ir.y + ir.radius * s;
    for (std::size_t i = 0; i < height; ++i) {
      const double r = static_cast<double>(i) / static_cast<double>(height - 1);
      out.at(i, j) = sample_bilinear(image, (1.0 - r) * px + r * qx, (1.0 - r) * py + r * qy);
    }
  }
  rescale_unit_range(out);
  return out;
}

/// Per-column linear interpolation to `target_height` rows with the first and
/// last rows aligned.
inline NormalizedIris resize_vertical(const NormalizedIris& img, std::size_t target_height) {
  if (target_height < 2) {
    throw std::invalid_argument("resize_vertical: target height must be at least 2, got " +
                                std::to_string(target_height));
  }
  if (img.height == 0) throw std::invalid_argument("resize_vertical: empty image");
  if (target_height == img.height) return img;
  NormalizedIris out(target_height, img.width);
  for (std::size_t i = 0; i < target_height; ++i) {
    // Integer numerator keeps both endpoints exact.
    const double pos = static_cast<double>(i * (img.height - 1)) / static_cast<double>(target_height - 1);
    const auto r0 = std::min(static_cast<std::size_t>(std::floor(pos)), img.height - 1);
    const std::size_t r1 = std::min(r0 + 1, img.height - 1);
    const double f = pos - static_cast<double>(r0);
    for (std::size_t j = 0; j < img.width; ++j) {
      out.at(i, j) = f == 0.0 ? img.at(r0, j) : img.at(r0, j) * (1.0 - f) + img.at(r1, j) * f;
    }
  }
  return out;
}

}  // namespace irismatch
