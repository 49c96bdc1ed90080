#pragma once

// End-user outputs: translated volumes with provenance, comparison tables,
// image grids and loss-curve plots.

#include <chrono>
#include <cstdio>
#include <ctime>
#include <iomanip>

#include <json.hpp>

#include "metrics.hpp"
#include "png.hpp"
#include "trainer.hpp"

namespace ctmr {

// ---- translate ----

/// Every slice through the deterministic evaluation chain and the
/// generator; output intensities mapped back to [0, 1].
template <typename T>
VolumeRecord translate_volume(Generator<T> &g, const VolumeRecord &v, Modality target, const PreprocessConfig &cfg) {
  PreprocessConfig c = cfg;
  c.augment = false;
  c.validate();
  const auto r = resample_slices(v, static_cast<std::size_t>(c.target_slices));
  const auto dim = static_cast<std::size_t>(c.crop_dim);
  VolumeRecord out = make_volume(dim, dim, r.slices, target, v.source_id);
  Rng unused(0);
  for (std::size_t s = 0; s < r.slices; ++s) {
    const Image x = preprocess_slice(r.slice(s), c, unused).pixels;
    Image y = from_network_range(translate_image(g, x));
    out.set_slice(s, y);
  }
  if (r.voxel_spacing) {
    auto sp = *r.voxel_spacing;
    sp[0] *= static_cast<double>(r.width) / c.resize_dim;
    sp[1] *= static_cast<double>(r.height) / c.resize_dim;
    out.voxel_spacing = sp;
  }
  return out;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::string utc_timestamp() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

struct Provenance {
  std::string model_hash; // FNV-1a of the checkpoint file
  Direction direction = Direction::CtToMr;
  std::string input, checkpoint, created;
  long long step = 0;
};

inline void write_provenance(const Provenance &p, const fs::path &volume_path) {
  nlohmann::ordered_json j;
  j["model_hash"] = p.model_hash;
  j["checkpoint"] = p.checkpoint;
  j["checkpoint_step"] = p.step;
  j["direction"] = to_string(p.direction);
  j["input"] = p.input;
  j["output"] = volume_path.filename().string();
  j["created"] = p.created;
  j["intensity_range"] = "[0, 1]";
  std::ofstream os(volume_path.string() + ".json");
  if (!os) throw IoError("cannot write provenance for " + volume_path.string());
  os << j.dump(2) << "\n";
}

// ---- report ----

struct ModelEvaluation {
  std::string model;
  EvaluationResult result;
};

inline std::string fmt17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}


inline void write_report_csv(const std::vector<ModelEvaluation> &rows, const fs::path &path) {
  require(!rows.empty(), "report: no evaluated models");
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  os << "model,direction,fid,ssim,mi,pixacc,n_slices\n";
  for (const auto &r : rows)
    for (const auto *m : {&r.result.ct_to_mr, &r.result.mr_to_ct})
      os << r.model << "," << to_string(m->direction) << "," << fmt17(m->fid) << "," << fmt17(m->ssim) << ","
         << fmt17(m->mi) << "," << fmt17(m->pixacc) << "," << m->n_slices << "\n";
  if (!os) throw IoError("write failed: " + path.string());
}

inline void write_per_slice_csv(const std::vector<ModelEvaluation> &rows, const fs::path &path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  os << "model,direction,slice_id,fid,ssim,mi,pixacc\n";
  for (const auto &r : rows)
    for (const auto &s : r.result.per_slice)
      os << r.model << "," << to_string(s.direction) << "," << s.slice_id << "," << fmt17(s.fid) << ","
         << fmt17(s.ssim) << "," << fmt17(s.mi) << "," << fmt17(s.pixacc) << "\n";
  if (!os) throw IoError("write failed: " + path.string());
}

struct ModelFailure {
  std::string model, message;
};

struct ReportOutcome {
  std::vector<ModelEvaluation> rows;
  std::vector<ModelFailure> failures;
};

/// The extractor is independent of the training seed so every model is
/// embedded the same way.
inline EmbeddingExtractor make_extractor(const EvalConfig &e) {
  return EmbeddingExtractor(parse_extractor_kind(e.extractor), static_cast<std::size_t>(e.embedding_dim));
}

inline EvalOptions eval_options(const RunConfig &c) {
  EvalOptions o;
  o.mi_bins = static_cast<std::size_t>(c.eval.mi_bins);
  o.ssim = c.train.ssim_constants;
  o.fid.max_pairs = static_cast<std::size_t>(c.eval.fid_max_pairs);
  return o;
}

/// Scores one checkpoint on raw test volumes using the checkpoint's own
/// preprocessing and evaluation settings.
template <typename T>
ModelEvaluation evaluate_checkpoint(const std::string &name, const fs::path &checkpoint,
                                    const std::vector<VolumeRecord> &ct, const std::vector<VolumeRecord> &mr) {
  auto st = load_checkpoint<T>(checkpoint);
  const RunConfig &cfg = st->config;
  const auto ct_slices = eval_slices(ct, cfg.preprocess), mr_slices = eval_slices(mr, cfg.preprocess);
  require(!ct_slices.empty() && !mr_slices.empty(), "no test slices");
  return {name, evaluate_model(st->bundle, ct_slices, mr_slices, make_extractor(cfg.eval), eval_options(cfg))};
}

/// Failures are collected per model; the others are still scored.
template <typename T>
ReportOutcome evaluate_checkpoints(const std::vector<std::pair<std::string, fs::path>> &models,
                                   const std::vector<VolumeRecord> &ct, const std::vector<VolumeRecord> &mr) {
  require(!models.empty(), "report: at least one checkpoint is required");
  require(!ct.empty() && !mr.empty(), "report: test sets are empty");
  ReportOutcome out;
  for (const auto &[name, path] : models) {
    try {
      out.rows.push_back(evaluate_checkpoint<T>(name, path, ct, mr));
    } catch (const std::exception &e) {
      out.failures.push_back({name, e.what()});
    }
  }
  return out;
}

/// Models as rows; CT->MR and MR->CT each with FID, SSIM, MI, pixacc.
inline std::string format_report_table(const std::vector<ModelEvaluation> &rows) {
  require(!rows.empty(), "report: no evaluated models");
  std::size_t name_w = 5;
  for (const auto &r : rows) name_w = std::max(name_w, r.model.size());
  std::ostringstream os;
  auto cell = [&](const std::string &s, std::size_t w) { os << std::left << std::setw(static_cast<int>(w)) << s; };
  const std::size_t cw = 9, group = 4 * cw;
  cell("Model", name_w);
  os << " | ";
  cell("CT->MR", group);
  os << " | ";
  cell("MR->CT", group);
  os << "\n";
  cell("", name_w);
  for (int g = 0; g < 2; ++g) {
    os << " | ";
    for (const char *h : {"FID", "SSIM", "MI", "pixacc"}) cell(h, cw);
  }
  os << "\n" << std::string(name_w + 2 * (group + 3), '-') << "\n";
  for (const auto &r : rows) {
    cell(r.model, name_w);
    for (const auto *m : {&r.result.ct_to_mr, &r.result.mr_to_ct}) {
      os << " | ";
      for (double v : {m->fid, m->ssim, m->mi, m->pixacc}) {
        std::ostringstream num;
        num << std::fixed << std::setprecision(4) << v;
        cell(num.str(), cw);
      }
    }
    os << "\n";
  }
  std::string out = os.str();
  // drop trailing padding
  std::string trimmed;
  std::istringstream is(out);
  std::string line;
  while (std::getline(is, line)) {
    line.erase(line.find_last_not_of(' ') + 1);
    trimmed += line + "\n";
  }
  return trimmed;
}

// ---- grids ----

/// Columns: real, translated and recovered by model A, translated and
/// recovered by model B.
struct GridSpec {
  std::size_t rows = 3;
  std::size_t cell_size = 256;
  static constexpr std::size_t kColumns = 5;

  void validate() const {
    require(rows >= 1, "grid: rows must be >= 1");
    require(cell_size >= 4, "grid: cell_size must be >= 4");
  }
};

inline std::uint8_t to_byte(double v01) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v01, 0.0, 1.0) * 255.0));
}

inline void blit(RasterImage &canvas, const Image &img_pm1, std::size_t x0, std::size_t y0, std::size_t cell) {
  Image u = from_network_range(img_pm1);
  if (u.height != cell || u.width != cell) u = resize_bicubic(u, cell, cell);
  for (std::size_t r = 0; r < cell; ++r)
    for (std::size_t c = 0; c < cell; ++c) *canvas.px(x0 + c, y0 + r) = to_byte(u.at(r, c));
}

/// Evenly spread picks of `rows` items out of n.
inline std::vector<std::size_t> uniform_picks(std::size_t n, std::size_t rows) {
  require(n >= 1, "grid: no samples available");
  std::vector<std::size_t> out;
  for (std::size_t r = 0; r < rows; ++r) out.push_back(std::min(n - 1, (2 * r + 1) * n / (2 * rows)));
  return out;
}

template <typename T>
RasterImage render_grid(const GridSpec &spec, Generator<T> &fwd_a, Generator<T> &back_a, Generator<T> &fwd_b,
                        Generator<T> &back_b, const std::vector<Image> &samples) {
  spec.validate();
  require(samples.size() == spec.rows, "grid: expected one sample per row");
  const std::size_t cell = spec.cell_size;
  RasterImage canvas(GridSpec::kColumns * cell, spec.rows * cell, 1);
  for (std::size_t r = 0; r < spec.rows; ++r) {
    const Image x = to_image(to_tensor<T>(samples[r]));
    const Image ta = translate_image(fwd_a, x), ra = translate_image(back_a, ta);
    const Image tb = translate_image(fwd_b, x), rb = translate_image(back_b, tb);
    std::size_t col = 0;
    for (const Image *im : {&x, &ta, &ra, &tb, &rb}) blit(canvas, *im, (col++) * cell, r * cell, cell);
  }
  return canvas;
}

// ---- loss plots ----

struct NamedLog {
  std::string name;
  std::vector<std::pair<long long, LossBreakdown>> rows;
};

/// One row per step up to the longest log; a log that has ended leaves its
/// cells empty.
inline std::string aligned_loss_csv(const std::vector<NamedLog> &logs) {
  require(!logs.empty(), "plot: no logs");
  std::ostringstream os;
  os << "step";
  for (const auto &l : logs) os << "," << l.name << "_generator_total," << l.name << "_dis_ct," << l.name << "_dis_mr";
  os << "\n";
  std::size_t longest = 0;
  for (const auto &l : logs) longest = std::max(longest, l.rows.size());
  for (std::size_t i = 0; i < longest; ++i) {
    long long step = static_cast<long long>(i) + 1;
    for (const auto &l : logs)
      if (i < l.rows.size()) {
        step = l.rows[i].first;
        break;
      }
    os << step;
    for (const auto &l : logs) {
      if (i < l.rows.size()) {
        const auto &b = l.rows[i].second;
        os << "," << fmt17(b.generator_total) << "," << fmt17(b.dis_ct) << "," << fmt17(b.dis_mr);
      } else {
        os << ",,,";
      }
    }
    os << "\n";
  }
  return os.str();
}

namespace detail {

inline void draw_line(RasterImage &img, double x0, double y0, double x1, double y1, const std::array<std::uint8_t, 3> &rgb) {
  const int steps = static_cast<int>(std::ceil(std::max(std::abs(x1 - x0), std::abs(y1 - y0)))) + 1;
  for (int s = 0; s <= steps; ++s) {
    const double t = static_cast<double>(s) / steps;
    const long x = std::lround(x0 + t * (x1 - x0)), y = std::lround(y0 + t * (y1 - y0));
    if (x < 0 || y < 0 || x >= static_cast<long>(img.width) || y >= static_cast<long>(img.height)) continue;
    std::copy(rgb.begin(), rgb.end(), img.px(static_cast<std::size_t>(x), static_cast<std::size_t>(y)));
  }
}

} // namespace detail

/// Two stacked panels (generator total on top, discriminator losses below),
/// one colour per log, step on the x axis.
inline RasterImage plot_losses(const std::vector<NamedLog> &logs, std::size_t width = 900, std::size_t height = 600) {
  require(!logs.empty(), "plot: no logs");
  static const std::array<std::array<std::uint8_t, 3>, 6> palette{
      {{31, 119, 180}, {214, 39, 40}, {44, 160, 44}, {148, 103, 189}, {255, 127, 14}, {23, 190, 207}}};
  RasterImage img(width, height, 3, 255);
  const double margin = 40;
  const double panel_h = (static_cast<double>(height) - 3 * margin) / 2;
  long long max_step = 1;
  for (const auto &l : logs)
    if (!l.rows.empty()) max_step = std::max(max_step, l.rows.back().first);

  for (int panel = 0; panel < 2; ++panel) {
    const double top = margin + panel * (panel_h + margin), bottom = top + panel_h;
    const double left = margin, right = static_cast<double>(width) - margin / 2;
    double lo = 1e300, hi = -1e300;
    for (const auto &l : logs)
      for (const auto &[s, b] : l.rows)
        for (double v : panel == 0 ? std::vector<double>{b.generator_total} : std::vector<double>{b.dis_ct, b.dis_mr}) {
          lo = std::min(lo, v);
          hi = std::max(hi, v);
        }
    if (!(hi > lo)) {
      lo -= 1;
      hi += 1;
    }
    const std::array<std::uint8_t, 3> black{0, 0, 0};
    detail::draw_line(img, left, top, left, bottom, black);
    detail::draw_line(img, left, bottom, right, bottom, black);
    auto X = [&](long long s) {
      return left + (right - left) * (max_step > 1 ? static_cast<double>(s - 1) / static_cast<double>(max_step - 1) : 0.0);
    };
    auto Y = [&](double v) { return bottom - (bottom - top) * (v - lo) / (hi - lo); };
    for (std::size_t k = 0; k < logs.size(); ++k) {
      const auto &rows = logs[k].rows;
      auto colour = palette[k % palette.size()];
      const int series = panel == 0 ? 1 : 2;
      for (int si = 0; si < series; ++si) {
        auto c = colour;
        if (si == 1)
          for (auto &ch : c) ch = static_cast<std::uint8_t>((ch + 255) / 2);
        auto value = [&](const LossBreakdown &b) { return panel == 0 ? b.generator_total : (si == 0 ? b.dis_ct : b.dis_mr); };
        for (std::size_t i = 1; i < rows.size(); ++i)
          detail::draw_line(img, X(rows[i - 1].first), Y(value(rows[i - 1].second)), X(rows[i].first),
                            Y(value(rows[i].second)), c);
      }
      // legend swatch
      for (std::size_t dy = 0; dy < 8; ++dy)
        for (std::size_t dx = 0; dx < 20; ++dx) {
          const std::size_t x = static_cast<std::size_t>(right) - 30 - 30 * k + dx, y = 10 + dy;
          if (x < width && y < height) std::copy(colour.begin(), colour.end(), img.px(x, y));
        }
    }
  }
  return img;
}

} // namespace ctmr
