#pragma once

// Run configuration and its flat text form:
//
//   # comment
//   key = value
//
// Unknown keys and malformed values are rejected. to_text() writes every key
// in a fixed order, so a configuration round-trips exactly.

#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "losses.hpp"
#include "metrics.hpp"
#include "networks.hpp"
#include "preprocess.hpp"

namespace ctmr {

struct TrainConfig {
  int epochs = 200;
  int batch_size = 1;
  double lr = 2e-4;
  double adam_beta1 = 0.5;
  double adam_beta2 = 0.999;
  int lr_decay_start = 100; // epoch index where linear decay to 0 begins
  int replay_buffer_size = 50;
  LossWeights weights;
  SsimMode ssim_mode = SsimMode::Global;
  SsimConstants ssim_constants;
  std::uint64_t seed = 0;
  int checkpoint_every = 0; // steps; 0 writes only the final checkpoint
  int log_every = 0;        // steps between progress lines; 0 is silent
  long long max_steps = 0;  // 0 runs every scheduled step
  int prefetch_threads = 1;

  void validate() const {
    require(epochs >= 0, "train: epochs must be >= 0");
    require(batch_size >= 1, "train: batch_size must be >= 1");
    require(lr > 0, "train: lr must be > 0");
    require(adam_beta1 >= 0 && adam_beta1 < 1, "train: adam_beta1 must lie in [0, 1)");
    require(adam_beta2 >= 0 && adam_beta2 < 1, "train: adam_beta2 must lie in [0, 1)");
    require(lr_decay_start >= 0, "train: lr_decay_start must be >= 0");
    require(replay_buffer_size >= 0, "train: replay_buffer_size must be >= 0");
    require(checkpoint_every >= 0 && log_every >= 0 && max_steps >= 0, "train: step counts must be >= 0");
    require(prefetch_threads >= 1, "train: prefetch_threads must be >= 1");
    weights.validate();
    ssim_constants.validate();
  }
};

struct EvalConfig {
  int mi_bins = 64;
  std::string extractor = "fixed_random_projection";
  int embedding_dim = 256;
  long long fid_max_pairs = 10000;

  void validate() const {
    require(mi_bins >= 2, "eval: mi_bins must be >= 2");
    require(embedding_dim >= 1, "eval: embedding_dim must be >= 1");
    require(fid_max_pairs >= 1, "eval: fid_max_pairs must be >= 1");
  }
};

struct RunConfig {
  TrainConfig train;
  GeneratorConfig generator;
  DiscriminatorConfig discriminator;
  PreprocessConfig preprocess;
  EvalConfig eval;
  int min_extent = 64;

  void validate() const {
    train.validate();
    generator.validate();
    discriminator.validate();
    preprocess.validate();
    eval.validate();
    require(min_extent >= 4, "min_extent must be >= 4");
  }

  /// The seed drives initialization, sampling and replay draws.
  void set_seed(std::uint64_t s) {
    train.seed = s;
    preprocess.seed = s;
  }
};

namespace detail {

struct ConfigField {
  std::string key;
  std::function<std::string(const RunConfig &)> get;
  std::function<void(RunConfig &, const std::string &)> set;
};

inline std::string fmt_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

template <typename I> I parse_int(const std::string &key, const std::string &v) {
  I out{};
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw ValidationError("config: bad integer for " + key + ": '" + v + "'");
  return out;
}

inline double parse_double(const std::string &key, const std::string &v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception &) {
    throw ValidationError("config: bad number for " + key + ": '" + v + "'");
  }
}

inline bool parse_bool(const std::string &key, const std::string &v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ValidationError("config: bad boolean for " + key + ": '" + v + "'");
}

template <typename M> ConfigField int_field(std::string key, M member) {
  return {key, [member](const RunConfig &c) { return std::to_string(member(const_cast<RunConfig &>(c))); },
          [member, key](RunConfig &c, const std::string &v) {
            auto &ref = member(c);
            ref = parse_int<std::remove_reference_t<decltype(ref)>>(key, v);
          }};
}

template <typename M> ConfigField double_field(std::string key, M member) {
  return {key, [member](const RunConfig &c) { return fmt_double(member(const_cast<RunConfig &>(c))); },
          [member, key](RunConfig &c, const std::string &v) { member(c) = parse_double(key, v); }};
}

inline const std::vector<ConfigField> &config_fields() {
  static const std::vector<ConfigField> fields = {
      int_field("seed", [](RunConfig &c) -> std::uint64_t & { return c.train.seed; }),
      int_field("epochs", [](RunConfig &c) -> int & { return c.train.epochs; }),
      int_field("batch_size", [](RunConfig &c) -> int & { return c.train.batch_size; }),
      double_field("lr", [](RunConfig &c) -> double & { return c.train.lr; }),
      double_field("adam_beta1", [](RunConfig &c) -> double & { return c.train.adam_beta1; }),
      double_field("adam_beta2", [](RunConfig &c) -> double & { return c.train.adam_beta2; }),
      int_field("lr_decay_start", [](RunConfig &c) -> int & { return c.train.lr_decay_start; }),
      int_field("replay_buffer_size", [](RunConfig &c) -> int & { return c.train.replay_buffer_size; }),
      int_field("checkpoint_every", [](RunConfig &c) -> int & { return c.train.checkpoint_every; }),
      int_field("log_every", [](RunConfig &c) -> int & { return c.train.log_every; }),
      int_field("max_steps", [](RunConfig &c) -> long long & { return c.train.max_steps; }),
      int_field("prefetch_threads", [](RunConfig &c) -> int & { return c.train.prefetch_threads; }),
      double_field("lambda_cyc", [](RunConfig &c) -> double & { return c.train.weights.lambda_cyc; }),
      double_field("lambda_id", [](RunConfig &c) -> double & { return c.train.weights.lambda_id; }),
      double_field("lambda_ssim", [](RunConfig &c) -> double & { return c.train.weights.lambda_ssim; }),
      {"ssim_mode", [](const RunConfig &c) { return to_string(c.train.ssim_mode); },
       [](RunConfig &c, const std::string &v) { c.train.ssim_mode = parse_ssim_mode(v); }},
      double_field("ssim_c1", [](RunConfig &c) -> double & { return c.train.ssim_constants.c1; }),
      double_field("ssim_c2", [](RunConfig &c) -> double & { return c.train.ssim_constants.c2; }),
      int_field("gen_resblocks", [](RunConfig &c) -> int & { return c.generator.n_resblocks; }),
      int_field("gen_base_channels", [](RunConfig &c) -> int & { return c.generator.base_channels; }),
      int_field("dis_layers", [](RunConfig &c) -> int & { return c.discriminator.n_layers; }),
      int_field("dis_base_channels", [](RunConfig &c) -> int & { return c.discriminator.base_channels; }),
      int_field("target_slices", [](RunConfig &c) -> int & { return c.preprocess.target_slices; }),
      int_field("resize_dim", [](RunConfig &c) -> int & { return c.preprocess.resize_dim; }),
      int_field("crop_dim", [](RunConfig &c) -> int & { return c.preprocess.crop_dim; }),
      double_field("flip_prob", [](RunConfig &c) -> double & { return c.preprocess.flip_prob; }),
      double_field("max_rotation_deg", [](RunConfig &c) -> double & { return c.preprocess.max_rotation_deg; }),
      {"augment", [](const RunConfig &c) { return std::string(c.preprocess.augment ? "true" : "false"); },
       [](RunConfig &c, const std::string &v) { c.preprocess.augment = parse_bool("augment", v); }},
      int_field("min_extent", [](RunConfig &c) -> int & { return c.min_extent; }),
      int_field("mi_bins", [](RunConfig &c) -> int & { return c.eval.mi_bins; }),
      {"extractor", [](const RunConfig &c) { return c.eval.extractor; },
       [](RunConfig &c, const std::string &v) {
         parse_extractor_kind(v);
         c.eval.extractor = v;
       }},
      int_field("embedding_dim", [](RunConfig &c) -> int & { return c.eval.embedding_dim; }),
      int_field("fid_max_pairs", [](RunConfig &c) -> long long & { return c.eval.fid_max_pairs; }),
  };
  return fields;
}

inline std::string trim(const std::string &s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

} // namespace detail

inline std::string to_text(const RunConfig &c) {
  std::string out;
  for (const auto &f : detail::config_fields()) out += f.key + " = " + f.get(c) + "\n";
  return out;
}

/// Applies key = value lines on top of `base`. The preprocess seed follows
/// the run seed.
inline RunConfig parse_config(const std::string &text, RunConfig base = {}) {
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ValidationError("config line " + std::to_string(lineno) + ": expected 'key = value'");
    const std::string key = detail::trim(line.substr(0, eq)), value = detail::trim(line.substr(eq + 1));
    bool found = false;
    for (const auto &f : detail::config_fields())
      if (f.key == key) {
        f.set(base, value);
        found = true;
        break;
      }
    if (!found) throw ValidationError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
  }
  base.preprocess.seed = base.train.seed;
  base.validate();
  return base;
}

inline RunConfig load_config_file(const fs::path &path, RunConfig base = {}) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read config " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str(), std::move(base));
}

} // namespace ctmr
