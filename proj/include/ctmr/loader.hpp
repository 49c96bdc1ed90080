#pragma once

// Unpaired slice loader. CT and MR streams are shuffled independently per
// epoch; every random draw for sample i of an epoch comes from an Rng keyed by
// (seed, epoch, i, modality), so prefetch order and thread count never change
// the emitted stream.

#include <algorithm>
#include <future>
#include <thread>
#include <utility>

#include "preprocess.hpp"

namespace ctmr {

struct SliceSample {
  Image pixels; // crop_dim x crop_dim in [-1, 1]
  Modality modality = Modality::CT;
  std::string source_id;
  std::size_t slice_index = 0;
  AugmentDraw augmentation;
  CropOffset crop;

  void validate(std::size_t dim) const {
    require(pixels.height == dim && pixels.width == dim, "slice sample has wrong extent");
    for (double v : pixels.pixels) require(v >= -1.0 && v <= 1.0, "slice sample outside [-1, 1]");
  }
};

namespace detail {
inline constexpr std::uint64_t kOrderKey = 0xFFFF;
inline std::uint64_t modality_key(Modality m) { return m == Modality::CT ? 0 : 1; }
} // namespace detail

/// Full training chain for one slice. With cfg.augment false this is the
/// deterministic evaluation chain (centre crop, no flip or rotation).
inline SliceSample preprocess_slice(const Image &slice, const PreprocessConfig &cfg, Rng &rng) {
  const auto dim = static_cast<std::size_t>(cfg.crop_dim);
  const Image resized = clamp01(resize_bicubic(minmax_normalize(slice), static_cast<std::size_t>(cfg.resize_dim)));
  SliceSample s;
  if (!cfg.augment) {
    s.crop = {(resized.height - dim) / 2, (resized.width - dim) / 2};
    s.pixels = to_network_range(random_crop(resized, dim, s.crop));
    return s;
  }
  s.crop = draw_crop_offset(resized, dim, rng);
  s.augmentation = draw_augmentation(cfg, rng);
  s.pixels = to_network_range(clamp01(augment(random_crop(resized, dim, s.crop), s.augmentation)));
  return s;
}

/// One modality's slice pool: every volume resampled to target_slices.
class SliceStream {
public:
  SliceStream() = default;
  SliceStream(std::vector<VolumeRecord> volumes, Modality m, std::size_t target_slices) : modality_(m) {
    for (auto &v : volumes) {
      require(v.modality == m, v.source_id + ": modality mismatch in " + to_string(m) + " stream");
      volumes_.push_back(resample_slices(v, target_slices));
    }
    for (std::size_t k = 0; k < volumes_.size(); ++k)
      for (std::size_t s = 0; s < volumes_[k].slices; ++s) items_.emplace_back(k, s);
  }

  std::size_t size() const { return items_.size(); }
  Modality modality() const { return modality_; }
  const std::vector<VolumeRecord> &volumes() const { return volumes_; }
  std::pair<std::size_t, std::size_t> item(std::size_t k) const { return items_.at(k); }

  /// Sample at position i of the given epoch.
  SliceSample get(const PreprocessConfig &cfg, std::size_t epoch, std::size_t i) const {
    const auto mk = detail::modality_key(modality_);
    Rng order(cfg.seed, {epoch, detail::kOrderKey, mk});
    const auto perm = permutation(items_.size(), order);
    return at_item(cfg, epoch, i, perm[i % perm.size()]);
  }

  SliceSample at_item(const PreprocessConfig &cfg, std::size_t epoch, std::size_t i, std::size_t item_index) const {
    const auto [k, s] = items_.at(item_index);
    Rng rng(cfg.seed, {epoch, i, detail::modality_key(modality_)});
    SliceSample out = preprocess_slice(volumes_[k].slice(s), cfg, rng);
    out.modality = modality_;
    out.source_id = volumes_[k].source_id;
    out.slice_index = s;
    return out;
  }

private:
  Modality modality_ = Modality::CT;
  std::vector<VolumeRecord> volumes_;
  std::vector<std::pair<std::size_t, std::size_t>> items_;
};

inline std::vector<VolumeRecord> load_directory(const fs::path &dir, Modality m, std::size_t min_extent = 64) {
  const auto files = list_volumes(dir);
  if (files.empty()) throw ValidationError("no volumes found in " + dir.string());
  std::vector<VolumeRecord> out;
  out.reserve(files.size());
  for (const auto &f : files) out.push_back(load_volume(f, m, min_extent));
  return out;
}

/// Yields (CT, MR) pairs drawn from unrelated source slices. An epoch has
/// max(n_CT, n_MR) pairs; the shorter stream wraps around its own
/// permutation.
class SliceLoader {
public:
  SliceLoader(std::vector<VolumeRecord> ct, std::vector<VolumeRecord> mr, PreprocessConfig cfg)
      : cfg_(std::move(cfg)) {
    cfg_.validate();
    require(!ct.empty(), "loader: CT set is empty");
    require(!mr.empty(), "loader: MR set is empty");
    const auto t = static_cast<std::size_t>(cfg_.target_slices);
    ct_ = SliceStream(std::move(ct), Modality::CT, t);
    mr_ = SliceStream(std::move(mr), Modality::MR, t);
    for (const auto *s : {&ct_, &mr_})
      for (const auto &v : s->volumes())
        require(v.height >= 4 && v.width >= 4, v.source_id + ": slice too small to resize");
  }

  const PreprocessConfig &config() const { return cfg_; }
  const SliceStream &stream(Modality m) const { return m == Modality::CT ? ct_ : mr_; }
  std::size_t epoch_length() const { return std::max(ct_.size(), mr_.size()); }

  std::pair<SliceSample, SliceSample> get(std::size_t epoch, std::size_t i) const {
    require(i < epoch_length(), "loader index out of range");
    return {ct_.get(cfg_, epoch, i), mr_.get(cfg_, epoch, i)};
  }

  /// Pairs [first, first + count) of an epoch, optionally transformed on
  /// several threads. Output equals the sequential result.
  std::vector<std::pair<SliceSample, SliceSample>> batch(std::size_t epoch, std::size_t first, std::size_t count,
                                                         unsigned threads = 1) const {
    std::vector<std::pair<SliceSample, SliceSample>> out(count);
    const auto ct_perm = order(Modality::CT, epoch), mr_perm = order(Modality::MR, epoch);
    auto work = [&](std::size_t lo, std::size_t hi) {
      for (std::size_t k = lo; k < hi; ++k) {
        const std::size_t i = (first + k) % epoch_length();
        out[k] = {ct_.at_item(cfg_, epoch, i, ct_perm[i % ct_perm.size()]),
                  mr_.at_item(cfg_, epoch, i, mr_perm[i % mr_perm.size()])};
      }
    };
    threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(count)));
    if (threads == 1) {
      work(0, count);
      return out;
    }
    std::vector<std::future<void>> jobs;
    const std::size_t chunk = (count + threads - 1) / threads;
    for (std::size_t lo = 0; lo < count; lo += chunk)
      jobs.push_back(std::async(std::launch::async, work, lo, std::min(count, lo + chunk)));
    for (auto &j : jobs) j.get();
    return out;
  }

  std::vector<std::size_t> order(Modality m, std::size_t epoch) const {
    Rng rng(cfg_.seed, {epoch, detail::kOrderKey, detail::modality_key(m)});
    return permutation(stream(m).size(), rng);
  }

private:
  PreprocessConfig cfg_;
  SliceStream ct_, mr_;
};

inline SliceLoader make_loader(const fs::path &ct_dir, const fs::path &mr_dir, const PreprocessConfig &cfg,
                               std::size_t min_extent = 64) {
  return SliceLoader(load_directory(ct_dir, Modality::CT, min_extent), load_directory(mr_dir, Modality::MR, min_extent),
                     cfg);
}

} // namespace ctmr
