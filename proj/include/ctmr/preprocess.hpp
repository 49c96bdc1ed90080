#pragma once

// Slice preprocessing: slice-axis resampling, min-max normalization,
// cubic-convolution resize, cropping and flip/rotate augmentation.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

#include "image.hpp"
#include "rng.hpp"
#include "volume_io.hpp"

namespace ctmr {

struct PreprocessConfig {
  int target_slices = 80;
  int resize_dim = 286;
  int crop_dim = 256;
  double flip_prob = 0.5;
  double max_rotation_deg = 10.0;
  bool augment = true;
  std::uint64_t seed = 0;

  void validate() const {
    require(target_slices >= 1, "preprocess: target_slices must be >= 1");
    require(crop_dim >= 4 && crop_dim % 4 == 0, "preprocess: crop_dim must be a positive multiple of 4");
    require(crop_dim <= resize_dim, "preprocess: crop_dim must not exceed resize_dim");
    require(flip_prob >= 0 && flip_prob <= 1, "preprocess: flip_prob must lie in [0, 1]");
    require(max_rotation_deg >= 0, "preprocess: max_rotation_deg must be >= 0");
  }
  friend bool operator==(const PreprocessConfig &, const PreprocessConfig &) = default;
};

/// Source coordinate along the slice axis for output slice j of `target`.
inline double slice_source_coordinate(std::size_t j, std::size_t source, std::size_t target) {
  if (target == 1) return 0.5 * static_cast<double>(source - 1);
  return static_cast<double>(j) * static_cast<double>(source - 1) / static_cast<double>(target - 1);
}

/// One output slice of a linear slice-axis resampling.
inline Image resample_slice(const VolumeRecord &v, std::size_t j, std::size_t target) {
  const double pos = slice_source_coordinate(j, v.slices, target);
  const auto i0 = static_cast<std::size_t>(std::floor(pos));
  const double t = pos - static_cast<double>(i0);
  if (t == 0.0 || i0 + 1 >= v.slices) return v.slice(std::min(i0, v.slices - 1));
  Image a = v.slice(i0);
  const Image b = v.slice(i0 + 1);
  for (std::size_t i = 0; i < a.size(); ++i) a.pixels[i] = (1.0 - t) * a.pixels[i] + t * b.pixels[i];
  return a;
}

/// Linear interpolation along the slice axis to exactly `target` slices, end
/// slices aligned. In-plane extent unchanged.
inline VolumeRecord resample_slices(const VolumeRecord &v, std::size_t target) {
  require(target >= 1, "resample_slices: target must be >= 1");
  if (target == v.slices) return v;
  VolumeRecord out = v;
  out.slices = target;
  out.voxels.assign(v.height * v.width * target, 0.0f);
  for (std::size_t j = 0; j < target; ++j) out.set_slice(j, resample_slice(v, j, target));
  if (out.voxel_spacing && target > 1 && v.slices > 1)
    (*out.voxel_spacing)[2] *= static_cast<double>(v.slices - 1) / static_cast<double>(target - 1);
  return out;
}

/// (x - min) / (max - min); a constant slice maps to all zeros.
inline Image minmax_normalize(const Image &img) {
  require(img.size() > 0, "minmax_normalize: empty image");
  const double lo = img.min(), hi = img.max();
  Image out(img.height, img.width, 0.0);
  if (hi == lo) return out;
  const double inv = 1.0 / (hi - lo);
  for (std::size_t i = 0; i < img.size(); ++i) out.pixels[i] = (img.pixels[i] - lo) * inv;
  return out;
}

/// Cubic convolution kernel with a = -0.5.
inline double cubic_kernel(double t) {
  constexpr double a = -0.5;
  t = std::abs(t);
  if (t <= 1.0) return ((a + 2) * t - (a + 3)) * t * t + 1;
  if (t < 2.0) return ((a * t - 5 * a) * t + 8 * a) * t - 4 * a;
  return 0.0;
}

namespace detail {

struct CubicTaps {
  std::array<std::ptrdiff_t, 4> idx;
  std::array<double, 4> w;
};

// Taps around a source coordinate, clamped to [0, n).
inline CubicTaps cubic_taps(double src, std::size_t n) {
  const auto base = static_cast<std::ptrdiff_t>(std::floor(src));
  const double t = src - static_cast<double>(base);
  CubicTaps taps{};
  for (int k = 0; k < 4; ++k) {
    const std::ptrdiff_t i = base - 1 + k;
    taps.idx[k] = std::clamp<std::ptrdiff_t>(i, 0, static_cast<std::ptrdiff_t>(n) - 1);
    taps.w[k] = cubic_kernel(t - static_cast<double>(k - 1));
  }
  return taps;
}

inline double sample_bicubic(const Image &img, double y, double x) {
  const auto ty = cubic_taps(y, img.height), tx = cubic_taps(x, img.width);
  double s = 0;
  for (int i = 0; i < 4; ++i) {
    double row = 0;
    for (int j = 0; j < 4; ++j) row += tx.w[j] * img.at(static_cast<std::size_t>(ty.idx[i]), static_cast<std::size_t>(tx.idx[j]));
    s += ty.w[i] * row;
  }
  return s;
}

} // namespace detail

/// Separable cubic-convolution resize with half-pixel centre alignment and
/// replicated borders.
inline Image resize_bicubic(const Image &img, std::size_t out_h, std::size_t out_w) {
  require(img.height >= 4 && img.width >= 4, "resize_bicubic: input must be at least 4x4");
  require(out_h >= 1 && out_w >= 1, "resize_bicubic: empty output");
  if (out_h == img.height && out_w == img.width) return img;
  const double sy = static_cast<double>(img.height) / static_cast<double>(out_h);
  const double sx = static_cast<double>(img.width) / static_cast<double>(out_w);
  std::vector<detail::CubicTaps> col_taps(out_w);
  for (std::size_t c = 0; c < out_w; ++c)
    col_taps[c] = detail::cubic_taps((static_cast<double>(c) + 0.5) * sx - 0.5, img.width);

  Image tmp(img.height, out_w);
  for (std::size_t r = 0; r < img.height; ++r)
    for (std::size_t c = 0; c < out_w; ++c) {
      const auto &t = col_taps[c];
      double s = 0;
      for (int k = 0; k < 4; ++k) s += t.w[k] * img.at(r, static_cast<std::size_t>(t.idx[k]));
      tmp.at(r, c) = s;
    }
  Image out(out_h, out_w);
  for (std::size_t r = 0; r < out_h; ++r) {
    const auto t = detail::cubic_taps((static_cast<double>(r) + 0.5) * sy - 0.5, img.height);
    for (std::size_t c = 0; c < out_w; ++c) {
      double s = 0;
      for (int k = 0; k < 4; ++k) s += t.w[k] * tmp.at(static_cast<std::size_t>(t.idx[k]), c);
      out.at(r, c) = s;
    }
  }
  return out;
}

inline Image resize_bicubic(const Image &img, std::size_t dim) { return resize_bicubic(img, dim, dim); }

struct CropOffset {
  std::size_t row = 0, col = 0;
  friend bool operator==(const CropOffset &, const CropOffset &) = default;
};

/// Exact dim x dim sub-window starting at offset.
inline Image random_crop(const Image &img, std::size_t dim, CropOffset offset) {
  if (dim > img.height || dim > img.width || offset.row > img.height - dim || offset.col > img.width - dim)
    throw ValidationError("crop offset (" + std::to_string(offset.row) + "," + std::to_string(offset.col) +
                          ") out of range for " + std::to_string(dim) + "x" + std::to_string(dim) + " crop of " +
                          std::to_string(img.height) + "x" + std::to_string(img.width));
  Image out(dim, dim);
  for (std::size_t r = 0; r < dim; ++r)
    std::copy_n(img.pixels.begin() + static_cast<std::ptrdiff_t>((offset.row + r) * img.width + offset.col), dim,
                out.pixels.begin() + static_cast<std::ptrdiff_t>(r * dim));
  return out;
}

inline CropOffset draw_crop_offset(const Image &img, std::size_t dim, Rng &rng) {
  return {rng.index(img.height - dim + 1), rng.index(img.width - dim + 1)};
}

inline Image center_crop(const Image &img, std::size_t dim) {
  return random_crop(img, dim, {(img.height - dim) / 2, (img.width - dim) / 2});
}

struct AugmentDraw {
  bool flip = false;
  double angle_deg = 0.0;
  friend bool operator==(const AugmentDraw &, const AugmentDraw &) = default;
};

inline AugmentDraw draw_augmentation(const PreprocessConfig &cfg, Rng &rng) {
  AugmentDraw d;
  d.flip = rng.bernoulli(cfg.flip_prob);
  d.angle_deg = rng.uniform(-cfg.max_rotation_deg, cfg.max_rotation_deg);
  return d;
}

inline Image flip_horizontal(const Image &img) {
  Image out(img.height, img.width);
  for (std::size_t r = 0; r < img.height; ++r)
    for (std::size_t c = 0; c < img.width; ++c) out.at(r, c) = img.at(r, img.width - 1 - c);
  return out;
}

/// Rotation about the image centre by angle_deg with cubic-convolution
/// resampling. Output pixels whose source lies outside the input take the
/// input minimum.
inline Image rotate(const Image &img, double angle_deg) {
  if (angle_deg == 0.0) return img;
  const double th = angle_deg * std::numbers::pi / 180.0, c = std::cos(th), s = std::sin(th);
  const double cy = 0.5 * static_cast<double>(img.height - 1), cx = 0.5 * static_cast<double>(img.width - 1);
  const double fill = img.min();
  const double eps = 1e-9;
  Image out(img.height, img.width);
  for (std::size_t r = 0; r < img.height; ++r)
    for (std::size_t col = 0; col < img.width; ++col) {
      const double dy = static_cast<double>(r) - cy, dx = static_cast<double>(col) - cx;
      const double sy = cy + c * dy - s * dx, sx = cx + s * dy + c * dx;
      if (sy < -eps || sx < -eps || sy > 2 * cy + eps || sx > 2 * cx + eps) {
        out.at(r, col) = fill;
        continue;
      }
      out.at(r, col) = detail::sample_bicubic(img, sy, sx);
    }
  return out;
}

/// Optional horizontal flip followed by rotation.
inline Image augment(const Image &img, const AugmentDraw &draw) {
  return rotate(draw.flip ? flip_horizontal(img) : img, draw.angle_deg);
}

inline Image clamp01(Image img) {
  for (auto &v : img.pixels) v = std::clamp(v, 0.0, 1.0);
  return img;
}

/// [0, 1] -> [-1, 1] via 2x - 1.
inline Image to_network_range(Image img) {
  for (auto &v : img.pixels) v = 2.0 * v - 1.0;
  return img;
}

/// (-1, 1) -> [0, 1] via (x + 1) / 2.
inline Image from_network_range(Image img) {
  for (auto &v : img.pixels) v = 0.5 * (v + 1.0);
  return img;
}

/// Deterministic evaluation chain for one (already resampled) slice:
/// min-max, resize, clamp, centre crop, map to [-1, 1].
inline Image preprocess_eval(const Image &slice, const PreprocessConfig &cfg) {
  const Image resized = clamp01(resize_bicubic(minmax_normalize(slice), static_cast<std::size_t>(cfg.resize_dim)));
  return to_network_range(center_crop(resized, static_cast<std::size_t>(cfg.crop_dim)));
}

} // namespace ctmr
