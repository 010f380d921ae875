#pragma once

// Seeded generator of identity-grouped synthetic normalized irises.
//
// Each identity owns a base texture: a sum of angular/radial sinusoids whose
// angular wavelengths straddle the default log-Gabor wavelength, plus a
// low-frequency field, min-max scaled to [0, 1]. Angular frequencies are whole
// cycles per row so circular column shifts model eye rotation exactly. Images
// are circular shifts of the base with Gaussian noise and optional zeroed
// horizontal bands.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "irismatch/dataset.hpp"
#include "irismatch/normalization.hpp"
#include "irismatch/random.hpp"

namespace irismatch {

struct SynthSpec {
  std::size_t identities = 40;
  std::size_t images_per_identity = 8;
  std::size_t height = kNormalizedHeight;
  std::size_t width = kNormalizedWidth;
  std::size_t texture_bands = 6;         // sinusoid components per identity
  std::size_t rotation = 4;              // max |column shift| per image
  double noise_sigma = 0.05;
  double occlusion_probability = 0.3;
  std::size_t occlusion_max_height = 24;  // rows
  double min_wavelength = 12.0;          // angular wavelength range, pixels
  double max_wavelength = 36.0;
  std::uint64_t seed = 1;

  void validate() const {
    if (identities == 0 || images_per_identity == 0 || texture_bands == 0) {
      throw std::invalid_argument("SynthSpec: counts must be positive");
    }
    if (height < 2 || width < 4) throw std::invalid_argument("SynthSpec: image must be at least 2x4");
    if (2 * rotation >= width) throw std::invalid_argument("SynthSpec: rotation range must be below W/2");
    if (!(noise_sigma >= 0.0)) throw std::invalid_argument("SynthSpec: noise sigma must be >= 0");
    if (!(occlusion_probability >= 0.0 && occlusion_probability <= 1.0)) {
      throw std::invalid_argument("SynthSpec: occlusion probability must lie in [0, 1]");
    }
    if (occlusion_probability > 0.0 && (occlusion_max_height == 0 || occlusion_max_height > height)) {
      throw std::invalid_argument("SynthSpec: occlusion band height must lie in [1, H]");
    }
    if (!(min_wavelength >= 2.0 && max_wavelength >= min_wavelength)) {
      throw std::invalid_argument("SynthSpec: wavelength range must satisfy 2 <= min <= max");
    }
    const auto [lo, hi] = cycle_range();
    if (lo > hi) throw std::invalid_argument("SynthSpec: no whole angular cycle count fits the wavelength range");
  }

  /// Whole angular cycle counts whose wavelength lies in [min, max].
  std::pair<long long, long long> cycle_range() const {
    const double w = static_cast<double>(width);
    return {static_cast<long long>(std::ceil(w / max_wavelength)), static_cast<long long>(std::floor(w / min_wavelength))};
  }
};

namespace detail {

inline NormalizedIris base_texture(const SynthSpec& spec, Rng& rng) {
  const auto [cmin, cmax] = spec.cycle_range();
  const double two_pi = 2.0 * std::numbers::pi;
  struct Component {
    double amplitude, cycles, radial, phase;
  };
  std::vector<Component> parts;
  for (std::size_t k = 0; k < spec.texture_bands; ++k) {
    const double amp = rng.uniform(0.5, 1.0);
    const auto cyc = static_cast<double>(rng.between(cmin, cmax));
    const double radial = rng.uniform(-2.0, 2.0);
    parts.push_back({amp, cyc, radial, rng.uniform(0.0, two_pi)});
  }
  // Low-frequency field.
  for (int k = 0; k < 3; ++k) {
    parts.push_back({rng.uniform(0.1, 0.3), static_cast<double>(rng.between(0, 2)), rng.uniform(-0.75, 0.75),
                     rng.uniform(0.0, two_pi)});
  }
  NormalizedIris img(spec.height, spec.width);
  const double H = static_cast<double>(spec.height), W = static_cast<double>(spec.width);
  for (std::size_t i = 0; i < spec.height; ++i) {
    for (std::size_t j = 0; j < spec.width; ++j) {
      double v = 0.0;
      for (const auto& c : parts) {
        v += c.amplitude * std::sin(two_pi * (c.cycles * static_cast<double>(j) / W +
                                              c.radial * static_cast<double>(i) / H) + c.phase);
      }
      img.at(i, j) = v;
    }
  }
  rescale_unit_range(img);
  return img;
}

/// True when the textures differ by more than 0.1 on at least 10% of pixels.
inline bool textures_distinct(const NormalizedIris& a, const NormalizedIris& b) {
  std::size_t far = 0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) far += std::abs(a.pixels[i] - b.pixels[i]) > 0.1 ? 1 : 0;
  return 10 * far >= a.pixels.size();
}

}  // namespace detail

/// Content moves toward larger column indices for positive `shift`.
inline NormalizedIris circular_shift_columns(const NormalizedIris& img, long shift) {
  NormalizedIris out(img.height, img.width);
  const long W = static_cast<long>(img.width);
  const long k = ((shift % W) + W) % W;
  for (std::size_t i = 0; i < img.height; ++i) {
    for (long j = 0; j < W; ++j) out.at(i, static_cast<std::size_t>((j + k) % W)) = img.at(i, static_cast<std::size_t>(j));
  }
  return out;
}

struct SyntheticImageInfo {
  long shift = 0;
  bool occluded = false;
  std::size_t band_row = 0;
  std::size_t band_height = 0;
};

/// Store with identities "synth_<k>"; optional per-image generation details.
inline IdentityStore generate(const SynthSpec& spec, std::vector<SyntheticImageInfo>* info = nullptr) {
  spec.validate();
  IdentityStore store;
  std::vector<NormalizedIris> bases;
  constexpr int kMaxAttempts = 64;
  for (std::size_t k = 0; k < spec.identities; ++k) {
    NormalizedIris base;
    bool accepted = false;
    for (int attempt = 0; attempt < kMaxAttempts && !accepted; ++attempt) {
      Rng rng(derive_seed(derive_seed(spec.seed, 1, k), 0, static_cast<std::uint64_t>(attempt)));
      base = detail::base_texture(spec, rng);
      accepted = std::all_of(bases.begin(), bases.end(),
                             [&](const NormalizedIris& other) { return detail::textures_distinct(base, other); });
    }
    if (!accepted) {
      throw std::runtime_error("generate: could not draw a texture distinct from earlier identities");
    }
    bases.push_back(base);

    Rng rng(derive_seed(spec.seed, 2, k));
    std::vector<NormalizedIris> images;
    for (std::size_t n = 0; n < spec.images_per_identity; ++n) {
      SyntheticImageInfo meta;
      meta.shift = static_cast<long>(rng.between(-static_cast<long long>(spec.rotation), static_cast<long long>(spec.rotation)));
      NormalizedIris img = circular_shift_columns(base, meta.shift);
      if (spec.noise_sigma > 0.0) {
        for (double& v : img.pixels) v = std::clamp(v + spec.noise_sigma * rng.normal(), 0.0, 1.0);
      }
      if (spec.occlusion_probability > 0.0 && rng.uniform() < spec.occlusion_probability) {
        meta.occluded = true;
        meta.band_height = 1 + rng.below(spec.occlusion_max_height);
        meta.band_row = rng.below(spec.height - meta.band_height + 1);
        for (std::size_t i = meta.band_row; i < meta.band_row + meta.band_height; ++i) {
          for (std::size_t j = 0; j < spec.width; ++j) img.at(i, j) = 0.0;
        }
      }
      images.push_back(std::move(img));
      if (info) info->push_back(meta);
    }
    store.add_identity("synth_" + std::to_string(k), std::move(images));
  }
  return store;
}

}  // namespace irismatch
