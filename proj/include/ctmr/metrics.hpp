#pragma once

// Evaluation metrics on [-1, 1] images: embedding similarity ("fid"), SSIM
// index, binned mutual information and cosine pixel accuracy, plus the
// per-direction evaluation of a trained model.

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>

#include "loader.hpp"
#include "losses.hpp"
#include "networks.hpp"

namespace ctmr {

struct MetricsReport {
  Direction direction = Direction::CtToMr;
  double fid = 0, ssim = 0, mi = 0, pixacc = 0;
  std::size_t n_slices = 0;

  void validate() const {
    require(n_slices >= 1, "metrics report needs at least one slice");
    require(pixacc >= -1 - 1e-12 && pixacc <= 1 + 1e-12, "pixacc outside [-1, 1]");
    require(ssim >= -1 - 1e-12 && ssim <= 1 + 1e-12, "ssim outside [-1, 1]");
    require(mi >= -1e-12, "mutual information is negative");
  }
};

enum class ExtractorKind { FixedRandomProjection, PretrainedDensenet121 };

inline std::string to_string(ExtractorKind k) {
  return k == ExtractorKind::FixedRandomProjection ? "fixed_random_projection" : "pretrained_densenet121";
}

inline ExtractorKind parse_extractor_kind(const std::string &s) {
  if (s == "fixed_random_projection") return ExtractorKind::FixedRandomProjection;
  if (s == "pretrained_densenet121") return ExtractorKind::PretrainedDensenet121;
  throw ValidationError("unknown extractor '" + s + "' (expected fixed_random_projection or pretrained_densenet121)");
}

/// Frozen image embedding. The random projection maps a flattened H x W
/// image through a D x (H*W) matrix with entries N(0, 1) / sqrt(D), drawn
/// row-major from Rng(seed, {H, W}); the matrix is built once per extent.
class EmbeddingExtractor {
public:
  EmbeddingExtractor(ExtractorKind kind = ExtractorKind::FixedRandomProjection, std::size_t embedding_dim = 256,
                     std::uint64_t seed = 0, std::string weights_ref = {})
      : kind_(kind), dim_(embedding_dim), seed_(seed), weights_ref_(std::move(weights_ref)),
        cache_(std::make_shared<Cache>()) {
    require(dim_ >= 1, "embedding_dim must be >= 1");
    if (kind_ == ExtractorKind::PretrainedDensenet121)
      throw ValidationError("extractor pretrained_densenet121 is not available in this build (no bundled weights "
                            "or inference runtime); use fixed_random_projection");
  }

  ExtractorKind kind() const { return kind_; }
  std::size_t embedding_dim() const { return dim_; }
  std::uint64_t seed() const { return seed_; }
  const std::string &weights_ref() const { return weights_ref_; }

  std::vector<double> embed(const Image &img) const {
    const auto &m = matrix(img.height, img.width);
    const std::size_t n = img.size();
    std::vector<double> e(dim_, 0.0);
    for (std::size_t d = 0; d < dim_; ++d) {
      const float *row = m.data() + d * n;
      double s = 0;
      for (std::size_t i = 0; i < n; ++i) s += static_cast<double>(row[i]) * img.pixels[i];
      e[d] = s;
    }
    return e;
  }

  /// The projection matrix for an extent (row-major, D rows).
  const std::vector<float> &matrix(std::size_t h, std::size_t w) const {
    std::lock_guard lock(cache_->mu);
    auto &slot = cache_->by_extent[{h, w}];
    if (slot.empty()) {
      Rng rng(seed_, {h, w});
      const double scale = 1.0 / std::sqrt(static_cast<double>(dim_));
      slot.resize(dim_ * h * w);
      for (auto &v : slot) v = static_cast<float>(rng.normal() * scale);
    }
    return slot;
  }

private:
  struct Cache {
    std::mutex mu;
    std::map<std::pair<std::size_t, std::size_t>, std::vector<float>> by_extent;
  };
  ExtractorKind kind_;
  std::size_t dim_;
  std::uint64_t seed_;
  std::string weights_ref_;
  std::shared_ptr<Cache> cache_;
};

inline void l2_normalize(std::vector<double> &v) {
  double s = 0;
  for (double x : v) s += x * x;
  if (s == 0) throw NumericalError("cannot normalize a zero embedding");
  const double inv = 1.0 / std::sqrt(s);
  for (double &x : v) x *= inv;
}

inline double dot(const std::vector<double> &a, const std::vector<double> &b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

struct FidOptions {
  std::size_t max_pairs = 10000;
  std::uint64_t seed = 0;
};

/// Real images paired with every generated image. All of them when
/// n_gen * n_real <= max_pairs, otherwise a seeded subset of
/// max(1, floor(max_pairs / n_gen)) reals shared by every generated image.
inline std::vector<std::size_t> fid_real_subset(std::size_t n_gen, std::size_t n_real, const FidOptions &opt) {
  std::size_t m = n_real;
  if (n_gen * n_real > opt.max_pairs) m = std::clamp<std::size_t>(opt.max_pairs / n_gen, 1, n_real);
  std::vector<std::size_t> idx(n_real);
  std::iota(idx.begin(), idx.end(), 0);
  if (m < n_real) {
    Rng rng(opt.seed, {0xF1D, n_gen, n_real});
    idx = permutation(n_real, rng);
    idx.resize(m);
    std::sort(idx.begin(), idx.end());
  }
  return idx;
}

/// Per generated image: mean inner product of its normalized embedding with
/// the normalized embeddings of the paired reals.
inline std::vector<double> fid_contributions(const std::vector<Image> &gen, const std::vector<Image> &real,
                                             const EmbeddingExtractor &ex, const FidOptions &opt = {}) {
  require(!gen.empty(), "fid: generated set is empty");
  require(!real.empty(), "fid: real set is empty");
  const auto subset = fid_real_subset(gen.size(), real.size(), opt);
  std::vector<std::vector<double>> re;
  re.reserve(subset.size());
  for (std::size_t k : subset) {
    re.push_back(ex.embed(real[k]));
    l2_normalize(re.back());
  }
  std::vector<double> out;
  out.reserve(gen.size());
  for (const auto &g : gen) {
    auto e = ex.embed(g);
    l2_normalize(e);
    double s = 0;
    for (const auto &r : re) s += dot(e, r);
    out.push_back(s / static_cast<double>(re.size()));
  }
  return out;
}

inline double mean_of(const std::vector<double> &v) {
  require(!v.empty(), "mean of an empty set");
  double s = 0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

/// Mean inner product of L2-normalized embeddings over (generated, real)
/// pairs. Higher means more similar.
inline double fid_similarity(const std::vector<Image> &gen, const std::vector<Image> &real,
                             const EmbeddingExtractor &ex, const FidOptions &opt = {}) {
  return mean_of(fid_contributions(gen, real, ex, opt));
}

inline void require_same_extent(const Image &a, const Image &b, const char *what) {
  if (!same_extent(a, b))
    throw ValidationError(std::string(what) + ": shape mismatch " + std::to_string(a.height) + "x" +
                          std::to_string(a.width) + " vs " + std::to_string(b.height) + "x" + std::to_string(b.width));
}

/// Whole-image SSIM of two [-1, 1] images (each remapped to [0, 1]).
inline double ssim_index(const Image &a, const Image &b, const SsimConstants &k = {}) {
  require_same_extent(a, b, "ssim_index");
  const auto st = detail::global_stats(a.pixels.data(), b.pixels.data(), a.size());
  return detail::ssim_terms(st.mx, st.my, st.vx, st.vy, st.cxy, k).value;
}

inline std::size_t mi_bin(double v, std::size_t bins) {
  const double t = (v + 1.0) * 0.5 * static_cast<double>(bins);
  if (!(t > 0)) return 0;
  return std::min(static_cast<std::size_t>(t), bins - 1);
}

/// Joint histogram over [-1, 1] with `bins` equal bins per axis (values
/// outside are clamped to the end bins); natural log.
inline double mutual_information(const Image &a, const Image &b, std::size_t bins = 64) {
  require_same_extent(a, b, "mutual_information");
  require(bins >= 2, "mutual_information: bins must be >= 2");
  require(a.size() > 0, "mutual_information: empty image");
  std::vector<double> joint(bins * bins, 0.0), pa(bins, 0.0), pb(bins, 0.0);
  for (std::size_t i = 0; i < a.size(); ++i) joint[mi_bin(a.pixels[i], bins) * bins + mi_bin(b.pixels[i], bins)] += 1;
  const double n = static_cast<double>(a.size());
  for (std::size_t i = 0; i < bins; ++i)
    for (std::size_t j = 0; j < bins; ++j) {
      joint[i * bins + j] /= n;
      pa[i] += joint[i * bins + j];
      pb[j] += joint[i * bins + j];
    }
  double mi = 0;
  for (std::size_t i = 0; i < bins; ++i)
    for (std::size_t j = 0; j < bins; ++j) {
      const double p = joint[i * bins + j];
      if (p > 0) mi += p * std::log(p / (pa[i] * pb[j]));
    }
  return std::max(mi, 0.0);
}

/// Cosine similarity of the flattened images.
inline double pixacc(const Image &a, const Image &b) {
  require_same_extent(a, b, "pixacc");
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a.pixels[i] * b.pixels[i];
    aa += a.pixels[i] * a.pixels[i];
    bb += b.pixels[i] * b.pixels[i];
  }
  if (aa == 0 || bb == 0) throw ValidationError("pixacc: zero-norm input");
  return ab / (std::sqrt(aa) * std::sqrt(bb));
}

/// One preprocessed evaluation slice (centre crop, no augmentation).
struct EvalSlice {
  std::string source_id;
  std::size_t slice_index = 0;
  Image pixels;

  std::string key() const {
    std::string n = std::to_string(slice_index);
    n.insert(0, n.size() < 4 ? 4 - n.size() : 0, '0');
    return source_id + ":" + n;
  }
};

inline std::vector<EvalSlice> eval_slices(const std::vector<VolumeRecord> &volumes, const PreprocessConfig &cfg) {
  PreprocessConfig c = cfg;
  c.augment = false;
  c.validate();
  std::vector<EvalSlice> out;
  Rng unused(0);
  for (const auto &raw : volumes) {
    const auto v = resample_slices(raw, static_cast<std::size_t>(c.target_slices));
    for (std::size_t s = 0; s < v.slices; ++s) out.push_back({v.source_id, s, preprocess_slice(v.slice(s), c, unused).pixels});
  }
  std::sort(out.begin(), out.end(), [](const EvalSlice &a, const EvalSlice &b) { return a.key() < b.key(); });
  return out;
}

struct SliceMetrics {
  Direction direction = Direction::CtToMr;
  std::string slice_id;
  double fid = 0, ssim = 0, mi = 0, pixacc = 0;
};

struct EvaluationResult {
  MetricsReport ct_to_mr, mr_to_ct;
  std::vector<SliceMetrics> per_slice; // sorted by direction, then slice id
};

struct EvalOptions {
  std::size_t mi_bins = 64;
  SsimConstants ssim;
  FidOptions fid;
};

template <typename T> Image translate_image(Generator<T> &g, const Image &x) {
  return to_image(g.infer(to_tensor<T>(x)), 0);
}

/// Means over slices sorted by slice id.
inline MetricsReport reduce_direction(Direction dir, const std::vector<SliceMetrics> &rows) {
  MetricsReport r;
  r.direction = dir;
  for (const auto &s : rows) {
    if (s.direction != dir) continue;
    r.fid += s.fid;
    r.ssim += s.ssim;
    r.mi += s.mi;
    r.pixacc += s.pixacc;
    ++r.n_slices;
  }
  require(r.n_slices > 0, "no slices evaluated for " + to_string(dir));
  const double n = static_cast<double>(r.n_slices);
  r.fid /= n;
  r.ssim /= n;
  r.mi /= n;
  r.pixacc /= n;
  return r;
}

/// For each direction: translate every source slice, compare translation
/// embeddings against the real target set, score ssim/mi between each input
/// and its translation and pixacc between each input and its recovery.
template <typename T>
EvaluationResult evaluate_model(ModelBundle<T> &bundle, const std::vector<EvalSlice> &ct,
                                const std::vector<EvalSlice> &mr, const EmbeddingExtractor &ex,
                                const EvalOptions &opt = {}) {
  require(!ct.empty() && !mr.empty(), "evaluation needs non-empty CT and MR test sets");
  EvaluationResult res;
  for (Direction dir : {Direction::CtToMr, Direction::MrToCt}) {
    const auto &src = dir == Direction::CtToMr ? ct : mr;
    const auto &tgt = dir == Direction::CtToMr ? mr : ct;
    auto &g_fwd = bundle.generator_to(target_modality(dir));
    auto &g_back = bundle.generator_to(source_modality(dir));
    std::vector<Image> translated, real;
    std::vector<SliceMetrics> rows;
    for (const auto &s : tgt) real.push_back(to_image(to_tensor<T>(s.pixels)));
    for (const auto &s : src) {
      // Inputs are compared at the network's precision.
      const Image x = to_image(to_tensor<T>(s.pixels));
      const Image t = translate_image(g_fwd, x);
      const Image r = translate_image(g_back, t);
      SliceMetrics m;
      m.direction = dir;
      m.slice_id = s.key();
      try {
        m.ssim = ssim_index(x, t, opt.ssim);
        m.mi = mutual_information(x, t, opt.mi_bins);
        m.pixacc = pixacc(x, r);
      } catch (const std::exception &e) {
        throw NumericalError("slice " + s.key() + " (" + to_string(dir) + "): " + e.what());
      }
      rows.push_back(std::move(m));
      translated.push_back(t);
    }
    const auto fid = fid_contributions(translated, real, ex, opt.fid);
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i].fid = fid[i];
    std::stable_sort(rows.begin(), rows.end(),
                     [](const SliceMetrics &a, const SliceMetrics &b) { return a.slice_id < b.slice_id; });
    (dir == Direction::CtToMr ? res.ct_to_mr : res.mr_to_ct) = reduce_direction(dir, rows);
    res.per_slice.insert(res.per_slice.end(), rows.begin(), rows.end());
  }
  return res;
}

} // namespace ctmr
