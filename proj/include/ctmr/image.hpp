#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "error.hpp"
#include "tensor.hpp"

namespace ctmr {

enum class Modality { CT, MR };
enum class Direction { CtToMr, MrToCt };

inline std::string to_string(Modality m) { return m == Modality::CT ? "CT" : "MR"; }
inline std::string to_string(Direction d) { return d == Direction::CtToMr ? "CT->MR" : "MR->CT"; }

inline Modality parse_modality(std::string_view s) {
  if (s == "CT" || s == "ct") return Modality::CT;
  if (s == "MR" || s == "mr") return Modality::MR;
  throw ValidationError("unknown modality '" + std::string(s) + "' (expected CT or MR)");
}

inline Direction parse_direction(std::string_view s) {
  if (s == "ct2mr" || s == "CT->MR" || s == "ct-mr") return Direction::CtToMr;
  if (s == "mr2ct" || s == "MR->CT" || s == "mr-ct") return Direction::MrToCt;
  throw ValidationError("unknown direction '" + std::string(s) + "' (expected ct2mr or mr2ct)");
}

inline Modality source_modality(Direction d) { return d == Direction::CtToMr ? Modality::CT : Modality::MR; }
inline Modality target_modality(Direction d) { return d == Direction::CtToMr ? Modality::MR : Modality::CT; }

/// Row-major single-channel 2-D grid.
struct Image {
  std::size_t height = 0, width = 0;
  std::vector<double> pixels;

  Image() = default;
  Image(std::size_t h, std::size_t w, double fill = 0.0) : height(h), width(w), pixels(h * w, fill) {}
  Image(std::size_t h, std::size_t w, std::vector<double> px) : height(h), width(w), pixels(std::move(px)) {
    require(pixels.size() == h * w, "image data does not match its extent");
  }

  std::size_t size() const { return pixels.size(); }
  double &at(std::size_t r, std::size_t c) { return pixels[r * width + c]; }
  double at(std::size_t r, std::size_t c) const { return pixels[r * width + c]; }

  double min() const { return *std::min_element(pixels.begin(), pixels.end()); }
  double max() const { return *std::max_element(pixels.begin(), pixels.end()); }

  friend bool operator==(const Image &, const Image &) = default;
};

inline bool same_extent(const Image &a, const Image &b) { return a.height == b.height && a.width == b.width; }

template <typename T> Tensor<T> to_tensor(const Image &img) {
  Tensor<T> t(Shape{1, 1, img.height, img.width});
  for (std::size_t i = 0; i < img.size(); ++i) t[i] = static_cast<T>(img.pixels[i]);
  return t;
}

template <typename T> Tensor<T> to_tensor(std::span<const Image> imgs) {
  require(!imgs.empty(), "empty image batch");
  const auto h = imgs[0].height, w = imgs[0].width;
  Tensor<T> t(Shape{imgs.size(), 1, h, w});
  for (std::size_t n = 0; n < imgs.size(); ++n) {
    require(imgs[n].height == h && imgs[n].width == w, "image batch with mixed extents");
    for (std::size_t i = 0; i < h * w; ++i) t[n * h * w + i] = static_cast<T>(imgs[n].pixels[i]);
  }
  return t;
}

/// Sample n, channel 0 of a tensor as an image.
template <typename T> Image to_image(const Tensor<T> &t, std::size_t n = 0) {
  Image img(t.shape().h, t.shape().w);
  const T *p = t.plane(n, 0);
  for (std::size_t i = 0; i < img.size(); ++i) img.pixels[i] = static_cast<double>(p[i]);
  return img;
}

} // namespace ctmr
