#pragma once

// Volume containers.
//
// NIfTI-1 single file (.nii, optionally gzip-compressed .nii.gz). x runs along
// image columns, y along rows, z along slices, x fastest.
//
// Raw fallback (.vol): three ASCII header lines, each ending in '\n',
//
//   dims: H W S
//   dtype: f32
//   modality: CT|MR
//
// immediately followed by H*W*S little-endian IEEE-754 float32 values. Value
// (row h, column w, slice s) is at index (s*H + h)*W + w, i.e. every slice is
// a row-major HxW image and slices follow each other.

#include <zlib.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "error.hpp"
#include "image.hpp"

namespace ctmr {

namespace fs = std::filesystem;

struct VolumeRecord {
  std::size_t height = 0, width = 0, slices = 0;
  std::vector<float> voxels; // (s*H + h)*W + w
  Modality modality = Modality::CT;
  std::optional<std::array<double, 3>> voxel_spacing; // mm, (column, row, slice)
  std::string source_id;

  float &at(std::size_t h, std::size_t w, std::size_t s) { return voxels[(s * height + h) * width + w]; }
  float at(std::size_t h, std::size_t w, std::size_t s) const { return voxels[(s * height + h) * width + w]; }

  Image slice(std::size_t s) const {
    require(s < slices, "slice index out of range");
    Image img(height, width);
    const float *p = voxels.data() + s * height * width;
    for (std::size_t i = 0; i < img.size(); ++i) img.pixels[i] = p[i];
    return img;
  }

  void set_slice(std::size_t s, const Image &img) {
    require(img.height == height && img.width == width, "slice extent mismatch");
    float *p = voxels.data() + s * height * width;
    for (std::size_t i = 0; i < img.size(); ++i) p[i] = static_cast<float>(img.pixels[i]);
  }

  void validate(std::size_t min_extent = 64) const {
    if (slices < 1) throw ValidationError(source_id + ": volume has no slices");
    if (height < min_extent || width < min_extent)
      throw ValidationError(source_id + ": in-plane extent " + std::to_string(height) + "x" + std::to_string(width) +
                            " below minimum " + std::to_string(min_extent));
    if (voxels.size() != height * width * slices) throw ValidationError(source_id + ": voxel count mismatch");
    for (float v : voxels)
      if (!std::isfinite(v)) throw ValidationError(source_id + ": volume contains NaN or Inf voxels");
  }

  friend bool operator==(const VolumeRecord &, const VolumeRecord &) = default;
};

inline VolumeRecord make_volume(std::size_t h, std::size_t w, std::size_t s, Modality m, std::string id = {}) {
  VolumeRecord v;
  v.height = h;
  v.width = w;
  v.slices = s;
  v.voxels.assign(h * w * s, 0.0f);
  v.modality = m;
  v.source_id = std::move(id);
  return v;
}

namespace detail {

inline bool ends_with(const std::string &s, const std::string &suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

inline std::string volume_stem(const fs::path &p) {
  std::string name = p.filename().string();
  for (const char *ext : {".nii.gz", ".nii", ".vol"})
    if (ends_with(name, ext)) return name.substr(0, name.size() - std::strlen(ext));
  return name;
}

inline std::vector<unsigned char> read_all_gz(const fs::path &path) {
  gzFile f = gzopen(path.string().c_str(), "rb");
  if (!f) throw IoError("cannot open " + path.string());
  std::vector<unsigned char> out;
  std::array<unsigned char, 1 << 16> buf{};
  int n = 0;
  while ((n = gzread(f, buf.data(), static_cast<unsigned>(buf.size()))) > 0) out.insert(out.end(), buf.data(), buf.data() + n);
  int err = 0;
  const char *msg = gzerror(f, &err);
  const std::string emsg = msg ? msg : "";
  gzclose(f);
  if (n < 0 || (err != Z_OK && err != Z_STREAM_END)) throw IoError("read error in " + path.string() + ": " + emsg);
  return out;
}

template <typename V> V load_scalar(const unsigned char *p, bool swap) {
  V v;
  std::memcpy(&v, p, sizeof(V));
  if (swap) {
    unsigned char b[sizeof(V)];
    std::memcpy(b, &v, sizeof(V));
    std::reverse(b, b + sizeof(V));
    std::memcpy(&v, b, sizeof(V));
  }
  return v;
}

template <typename V> void store_scalar(unsigned char *p, V v) {
  static_assert(std::endian::native == std::endian::little, "big-endian hosts are not supported");
  std::memcpy(p, &v, sizeof(V));
}

inline VolumeRecord parse_nifti(const std::vector<unsigned char> &bytes, const std::string &where) {
  if (bytes.size() < 348) throw IoError(where + ": truncated NIfTI header");
  bool swap = false;
  const auto hdr = load_scalar<std::int32_t>(bytes.data(), false);
  if (hdr != 348) {
    if (load_scalar<std::int32_t>(bytes.data(), true) != 348) throw IoError(where + ": not a NIfTI-1 file");
    swap = true;
  }
  if (std::memcmp(bytes.data() + 344, "n+1", 3) != 0)
    throw IoError(where + ": unsupported NIfTI variant (expected single-file n+1)");
  std::array<std::int16_t, 8> dim{};
  for (int i = 0; i < 8; ++i) dim[i] = load_scalar<std::int16_t>(bytes.data() + 40 + 2 * i, swap);
  if (dim[0] < 2 || dim[0] > 7) throw IoError(where + ": invalid NIfTI dim[0]");
  for (int i = 4; i <= dim[0]; ++i)
    if (dim[i] > 1) throw IoError(where + ": volumes with more than 3 dimensions are not supported");
  const std::size_t W = static_cast<std::size_t>(std::max<std::int16_t>(dim[1], 1));
  const std::size_t H = static_cast<std::size_t>(std::max<std::int16_t>(dim[2], 1));
  const std::size_t S = dim[0] >= 3 ? static_cast<std::size_t>(std::max<std::int16_t>(dim[3], 1)) : 1;
  const auto datatype = load_scalar<std::int16_t>(bytes.data() + 70, swap);
  std::array<float, 8> pixdim{};
  for (int i = 0; i < 8; ++i) pixdim[i] = load_scalar<float>(bytes.data() + 76 + 4 * i, swap);
  const auto vox_offset = static_cast<std::size_t>(load_scalar<float>(bytes.data() + 108, swap));
  const float slope = load_scalar<float>(bytes.data() + 112, swap);
  const float inter = load_scalar<float>(bytes.data() + 116, swap);

  std::size_t bpv = 0;
  switch (datatype) {
  case 2: bpv = 1; break;   // uint8
  case 256: bpv = 1; break; // int8
  case 4: bpv = 2; break;   // int16
  case 512: bpv = 2; break; // uint16
  case 8: bpv = 4; break;   // int32
  case 16: bpv = 4; break;  // float32
  case 64: bpv = 8; break;  // float64
  default: throw IoError(where + ": unsupported NIfTI datatype " + std::to_string(datatype));
  }
  const std::size_t count = W * H * S;
  if (vox_offset < 348 || bytes.size() < vox_offset + count * bpv)
    throw IoError(where + ": truncated NIfTI voxel data");

  VolumeRecord v;
  v.height = H;
  v.width = W;
  v.slices = S;
  v.voxels.resize(count);
  const unsigned char *p = bytes.data() + vox_offset;
  for (std::size_t i = 0; i < count; ++i, p += bpv) {
    double x = 0;
    switch (datatype) {
    case 2: x = *p; break;
    case 256: x = static_cast<std::int8_t>(*p); break;
    case 4: x = load_scalar<std::int16_t>(p, swap); break;
    case 512: x = load_scalar<std::uint16_t>(p, swap); break;
    case 8: x = load_scalar<std::int32_t>(p, swap); break;
    case 16: x = load_scalar<float>(p, swap); break;
    case 64: x = load_scalar<double>(p, swap); break;
    }
    if (slope != 0.0f && !(slope == 1.0f && inter == 0.0f)) x = x * slope + inter;
    v.voxels[i] = static_cast<float>(x);
  }
  if (pixdim[1] > 0 && pixdim[2] > 0 && pixdim[3] > 0) v.voxel_spacing = std::array<double, 3>{pixdim[1], pixdim[2], pixdim[3]};
  return v;
}

inline std::vector<unsigned char> encode_nifti(const VolumeRecord &v) {
  std::vector<unsigned char> out(352 + v.voxels.size() * 4, 0);
  store_scalar<std::int32_t>(out.data(), 348);
  const std::int16_t dims[8] = {3, static_cast<std::int16_t>(v.width), static_cast<std::int16_t>(v.height),
                                static_cast<std::int16_t>(v.slices), 1, 1, 1, 1};
  for (int i = 0; i < 8; ++i) store_scalar<std::int16_t>(out.data() + 40 + 2 * i, dims[i]);
  store_scalar<std::int16_t>(out.data() + 70, 16);
  store_scalar<std::int16_t>(out.data() + 72, 32);
  const auto sp = v.voxel_spacing.value_or(std::array<double, 3>{1.0, 1.0, 1.0});
  const float pixdim[8] = {1.0f, static_cast<float>(sp[0]), static_cast<float>(sp[1]), static_cast<float>(sp[2]),
                           0, 0, 0, 0};
  for (int i = 0; i < 8; ++i) store_scalar<float>(out.data() + 76 + 4 * i, pixdim[i]);
  store_scalar<float>(out.data() + 108, 352.0f);
  store_scalar<float>(out.data() + 112, 1.0f);
  out[123] = 2; // xyzt_units: mm
  const std::string desc = "ctmr modality=" + to_string(v.modality);
  std::memcpy(out.data() + 148, desc.data(), std::min<std::size_t>(desc.size(), 79));
  std::memcpy(out.data() + 344, "n+1\0", 4);
  std::memcpy(out.data() + 352, v.voxels.data(), v.voxels.size() * 4);
  return out;
}

inline VolumeRecord parse_raw(const std::vector<unsigned char> &bytes, const std::string &where) {
  std::size_t pos = 0;
  auto line = [&]() -> std::string {
    const auto nl = std::find(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.end(), '\n');
    if (nl == bytes.end()) throw IoError(where + ": truncated raw volume header");
    std::string s(bytes.begin() + static_cast<std::ptrdiff_t>(pos), nl);
    pos = static_cast<std::size_t>(nl - bytes.begin()) + 1;
    return s;
  };
  VolumeRecord v;
  {
    std::istringstream is(line());
    std::string key;
    is >> key >> v.height >> v.width >> v.slices;
    if (key != "dims:" || !is) throw IoError(where + ": bad raw header line 1 (expected 'dims: H W S')");
  }
  if (line() != "dtype: f32") throw IoError(where + ": bad raw header line 2 (expected 'dtype: f32')");
  {
    const std::string l = line();
    if (l.rfind("modality: ", 0) != 0) throw IoError(where + ": bad raw header line 3 (expected 'modality: CT|MR')");
    try {
      v.modality = parse_modality(l.substr(10));
    } catch (const ValidationError &) {
      throw IoError(where + ": bad modality in raw header");
    }
  }
  const std::size_t count = v.height * v.width * v.slices;
  if (bytes.size() - pos < count * 4) throw IoError(where + ": truncated raw voxel data");
  v.voxels.resize(count);
  for (std::size_t i = 0; i < count; ++i) v.voxels[i] = load_scalar<float>(bytes.data() + pos + 4 * i, false);
  return v;
}

inline std::vector<unsigned char> encode_raw(const VolumeRecord &v) {
  const std::string header = "dims: " + std::to_string(v.height) + " " + std::to_string(v.width) + " " +
                             std::to_string(v.slices) + "\ndtype: f32\nmodality: " + to_string(v.modality) + "\n";
  std::vector<unsigned char> out(header.begin(), header.end());
  const std::size_t off = out.size();
  out.resize(off + v.voxels.size() * 4);
  for (std::size_t i = 0; i < v.voxels.size(); ++i) store_scalar<float>(out.data() + off + 4 * i, v.voxels[i]);
  return out;
}

} // namespace detail

inline bool is_volume_file(const fs::path &p) {
  const std::string n = p.filename().string();
  return detail::ends_with(n, ".nii") || detail::ends_with(n, ".nii.gz") || detail::ends_with(n, ".vol");
}

/// Modality recorded in the file itself (raw header, or the description
/// field written by save_volume for NIfTI), if any.
inline std::optional<Modality> declared_modality(const fs::path &path) {
  const auto bytes = detail::read_all_gz(path);
  const std::string name = path.filename().string();
  if (detail::ends_with(name, ".vol")) return detail::parse_raw(bytes, path.string()).modality;
  if (bytes.size() < 348) return std::nullopt;
  const std::string desc(reinterpret_cast<const char *>(bytes.data()) + 148, 80);
  const auto at = desc.find("ctmr modality=");
  if (at == std::string::npos) return std::nullopt;
  const std::string m = desc.substr(at + 14, 2);
  if (m == "CT") return Modality::CT;
  if (m == "MR") return Modality::MR;
  return std::nullopt;
}

/// Reads and validates a volume. Intensities are kept as stored (after the
/// NIfTI scale/intercept, when present).
inline VolumeRecord load_volume(const fs::path &path, Modality modality, std::size_t min_extent = 64) {
  if (!fs::exists(path)) throw IoError("no such file: " + path.string());
  const std::string where = path.string();
  const auto bytes = detail::read_all_gz(path);
  VolumeRecord v;
  if (detail::ends_with(path.filename().string(), ".vol")) {
    v = detail::parse_raw(bytes, where);
    if (v.modality != modality)
      throw ValidationError(where + ": file declares " + to_string(v.modality) + " but " + to_string(modality) +
                            " was requested");
  } else {
    v = detail::parse_nifti(bytes, where);
    v.modality = modality;
  }
  v.source_id = detail::volume_stem(path);
  v.validate(min_extent);
  return v;
}

/// Writes .nii, .nii.gz or .vol depending on the extension.
inline void save_volume(const VolumeRecord &v, const fs::path &path) {
  const std::string name = path.filename().string();
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::vector<unsigned char> bytes;
  if (detail::ends_with(name, ".vol")) bytes = detail::encode_raw(v);
  else if (detail::ends_with(name, ".nii") || detail::ends_with(name, ".nii.gz")) bytes = detail::encode_nifti(v);
  else throw ValidationError("unsupported volume extension: " + path.string());

  if (detail::ends_with(name, ".gz")) {
    gzFile f = gzopen(path.string().c_str(), "wb6");
    if (!f) throw IoError("cannot write " + path.string());
    const int n = gzwrite(f, bytes.data(), static_cast<unsigned>(bytes.size()));
    if (gzclose(f) != Z_OK || n != static_cast<int>(bytes.size())) throw IoError("write failed: " + path.string());
    return;
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  os.write(reinterpret_cast<const char *>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw IoError("write failed: " + path.string());
}

/// Volume files in a directory, sorted by file name.
inline std::vector<fs::path> list_volumes(const fs::path &dir) {
  if (!fs::is_directory(dir)) throw ValidationError("not a directory: " + dir.string());
  std::vector<fs::path> out;
  for (const auto &e : fs::directory_iterator(dir))
    if (e.is_regular_file() && is_volume_file(e.path())) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

} // namespace ctmr
