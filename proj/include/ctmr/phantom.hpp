#pragma once

// Synthetic pseudo-CT / pseudo-MR slices rendered from one shared label map
// of rotated ellipses. Class 0 is background, 1 "bone", 2 "soft tissue".

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <string>
#include <vector>

#include "image.hpp"
#include "rng.hpp"
#include "volume_io.hpp"

namespace ctmr {

enum StructureClass : std::uint8_t { Background = 0, Bone = 1, Tissue = 2 };
inline constexpr std::size_t kStructureClasses = 3;

struct PhantomSpec {
  int image_size = 256;
  int n_structures = 5; // body outline plus inner ellipses
  std::array<double, kStructureClasses> ct_contrast{0.05, 0.95, 0.35};
  std::array<double, kStructureClasses> mr_contrast{0.05, 0.15, 0.80};
  double noise_sigma = 0.02;
  std::uint64_t seed = 0;

  void validate() const {
    require(image_size >= 64, "phantom: image_size must be >= 64");
    require(image_size % 4 == 0, "phantom: image_size must be divisible by 4");
    require(n_structures >= 1, "phantom: n_structures must be >= 1");
    require(noise_sigma >= 0, "phantom: noise_sigma must be >= 0");
    bool differs = false;
    for (std::size_t c = 0; c < kStructureClasses; ++c) {
      require(ct_contrast[c] >= 0 && ct_contrast[c] <= 1 && mr_contrast[c] >= 0 && mr_contrast[c] <= 1,
              "phantom: contrast values must lie in [0, 1]");
      differs = differs || ct_contrast[c] != mr_contrast[c];
    }
    require(differs, "phantom: ct_contrast and mr_contrast must differ for at least one structure class");
  }
};

struct PhantomPair {
  std::size_t size = 0;
  std::vector<std::uint8_t> structure_map; // row-major size x size labels
  Image ct_image, mr_image;
  std::string id;
};

inline std::string phantom_id(const PhantomSpec &spec, std::size_t index) {
  return "phantom-" + std::to_string(spec.seed) + "-" + std::to_string(index);
}

/// Deterministic in (spec, index).
inline PhantomPair generate_phantom(const PhantomSpec &spec, std::size_t index) {
  spec.validate();
  const std::size_t n = static_cast<std::size_t>(spec.image_size);
  const double size = static_cast<double>(n);
  Rng shape_rng(spec.seed, {index, 0});

  struct Ellipse {
    double cy, cx, a, b, theta;
    std::uint8_t label;
  };
  std::vector<Ellipse> ellipses;
  const double body_cy = size * shape_rng.uniform(0.45, 0.55), body_cx = size * shape_rng.uniform(0.45, 0.55);
  const double body_a = size * shape_rng.uniform(0.36, 0.45), body_b = size * shape_rng.uniform(0.28, 0.40);
  const double body_t = shape_rng.uniform(-0.3, 0.3);
  ellipses.push_back({body_cy, body_cx, body_a, body_b, body_t, Tissue});
  for (int k = 1; k < spec.n_structures; ++k) {
    const double r = 0.55 * std::sqrt(shape_rng.uniform()), phi = shape_rng.uniform(0, 2 * std::numbers::pi);
    const double cy = body_cy + r * body_b * std::sin(phi), cx = body_cx + r * body_a * std::cos(phi);
    const double a = size * shape_rng.uniform(0.05, 0.13), b = size * shape_rng.uniform(0.04, 0.10);
    const double t = shape_rng.uniform(0, std::numbers::pi);
    const std::uint8_t label = (k == 1 || shape_rng.bernoulli(0.6)) ? Bone : Tissue;
    ellipses.push_back({cy, cx, a, b, t, label});
  }

  PhantomPair pair;
  pair.size = n;
  pair.id = phantom_id(spec, index);
  pair.structure_map.assign(n * n, Background);
  for (const auto &e : ellipses) {
    const double c = std::cos(e.theta), s = std::sin(e.theta);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t col = 0; col < n; ++col) {
        const double dy = static_cast<double>(r) + 0.5 - e.cy, dx = static_cast<double>(col) + 0.5 - e.cx;
        const double u = (dx * c + dy * s) / e.a, v = (-dx * s + dy * c) / e.b;
        if (u * u + v * v <= 1.0) pair.structure_map[r * n + col] = e.label;
      }
  }

  // Independent noise streams; values clipped to [0, 1] and rounded to float
  // precision so a float32 export round-trips exactly.
  auto render = [&](const std::array<double, kStructureClasses> &contrast, std::uint64_t stream) {
    Rng noise(spec.seed, {index, stream});
    Image img(n, n);
    for (std::size_t i = 0; i < n * n; ++i) {
      double v = contrast[pair.structure_map[i]];
      if (spec.noise_sigma > 0) v += noise.normal(0.0, spec.noise_sigma);
      v = std::clamp(v, 0.0, 1.0);
      img.pixels[i] = static_cast<double>(static_cast<float>(v));
    }
    return img;
  };
  pair.ct_image = render(spec.ct_contrast, 1);
  pair.mr_image = render(spec.mr_contrast, 2);
  return pair;
}

struct ManifestEntry {
  std::string id;
  std::string ct_path, mr_path; // relative to the dataset directory
};

struct PhantomManifest {
  fs::path root;
  std::vector<ManifestEntry> entries;
};

inline VolumeRecord phantom_volume(const Image &img, Modality m, const std::string &id) {
  VolumeRecord v = make_volume(img.height, img.width, 1, m, id);
  v.set_slice(0, img);
  v.voxel_spacing = std::array<double, 3>{1.0, 1.0, 1.0};
  return v;
}

/// Writes n CT and n MR single-slice volumes into out_dir/ct and out_dir/mr.
/// Each modality is written in its own random order, so file k of the CT
/// list and file k of the MR list are generally different phantoms; the
/// hidden pairing is recorded in out_dir/manifest.csv.
inline PhantomManifest export_phantom_dataset(const PhantomSpec &spec, std::size_t n, const fs::path &out_dir) {
  spec.validate();
  std::error_code ec;
  fs::create_directories(out_dir / "ct", ec);
  if (ec) throw IoError("cannot create " + (out_dir / "ct").string() + ": " + ec.message());
  fs::create_directories(out_dir / "mr", ec);
  if (ec) throw IoError("cannot create " + (out_dir / "mr").string() + ": " + ec.message());

  Rng ct_order(spec.seed, {0xC7}), mr_order(spec.seed, {0x3A});
  const auto ct_perm = permutation(n, ct_order), mr_perm = permutation(n, mr_order);
  std::vector<std::size_t> ct_slot(n), mr_slot(n);
  for (std::size_t k = 0; k < n; ++k) {
    ct_slot[ct_perm[k]] = k;
    mr_slot[mr_perm[k]] = k;
  }

  auto file_name = [&](const char *prefix, std::size_t k) {
    std::string num = std::to_string(k);
    num.insert(0, num.size() < 4 ? 4 - num.size() : 0, '0');
    return std::string(prefix) + "_" + num + ".nii";
  };

  PhantomManifest manifest;
  manifest.root = out_dir;
  for (std::size_t i = 0; i < n; ++i) {
    const PhantomPair p = generate_phantom(spec, i);
    ManifestEntry e{p.id, "ct/" + file_name("ct", ct_slot[i]), "mr/" + file_name("mr", mr_slot[i])};
    save_volume(phantom_volume(p.ct_image, Modality::CT, p.id), out_dir / e.ct_path);
    save_volume(phantom_volume(p.mr_image, Modality::MR, p.id), out_dir / e.mr_path);
    manifest.entries.push_back(std::move(e));
  }

  std::ofstream os(out_dir / "manifest.csv");
  if (!os) throw IoError("cannot write " + (out_dir / "manifest.csv").string());
  os << "id,ct_path,mr_path\n";
  for (const auto &e : manifest.entries) os << e.id << "," << e.ct_path << "," << e.mr_path << "\n";
  if (!os) throw IoError("write failed: " + (out_dir / "manifest.csv").string());
  return manifest;
}

inline PhantomManifest read_manifest(const fs::path &dir) {
  std::ifstream is(dir / "manifest.csv");
  if (!is) throw IoError("cannot read " + (dir / "manifest.csv").string());
  PhantomManifest m;
  m.root = dir;
  std::string line;
  std::getline(is, line);
  if (line != "id,ct_path,mr_path") throw IoError("bad manifest header in " + (dir / "manifest.csv").string());
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto a = line.find(','), b = line.find(',', a + 1);
    if (a == std::string::npos || b == std::string::npos) throw IoError("bad manifest line: " + line);
    m.entries.push_back({line.substr(0, a), line.substr(a + 1, b - a - 1), line.substr(b + 1)});
  }
  return m;
}

} // namespace ctmr
