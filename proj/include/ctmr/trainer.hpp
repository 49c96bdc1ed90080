#pragma once

// Adversarial training loop: joint generator step, replay pools, separate
// discriminator steps, checkpoints and the per-step loss log.

#include <bit>
#include <cstdio>
#include <cstring>
#include <iostream>
#include <optional>

#include "config.hpp"
#include "loader.hpp"
#include "losses.hpp"
#include "networks.hpp"

namespace ctmr {

/// Adam with bias correction; state per parameter.
template <typename T> class Adam {
public:
  Adam() = default;
  Adam(std::vector<Var<T>> params, double beta1, double beta2, double eps = 1e-8)
      : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto &p : params_) {
      m_.emplace_back(p.shape());
      v_.emplace_back(p.shape());
    }
  }

  /// Parameters whose gradient is empty are skipped.
  void step(double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      const auto &g = params_[k].grad();
      if (g.empty()) continue;
      auto &p = params_[k].mutable_value();
      auto &m = m_[k];
      auto &v = v_[k];
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double gi = g[i];
        const double mi = beta1_ * m[i] + (1.0 - beta1_) * gi;
        const double vi = beta2_ * v[i] + (1.0 - beta2_) * gi * gi;
        m[i] = static_cast<T>(mi);
        v[i] = static_cast<T>(vi);
        const double mhat = static_cast<double>(m[i]) / bc1, vhat = static_cast<double>(v[i]) / bc2;
        p[i] = static_cast<T>(static_cast<double>(p[i]) - lr * mhat / (std::sqrt(vhat) + eps_));
      }
    }
  }

  long long t() const { return t_; }
  void set_t(long long t) { t_ = t; }
  std::vector<Tensor<T>> &m() { return m_; }
  std::vector<Tensor<T>> &v() { return v_; }
  const std::vector<Tensor<T>> &m() const { return m_; }
  const std::vector<Tensor<T>> &v() const { return v_; }
  const std::vector<Var<T>> &params() const { return params_; }

private:
  std::vector<Var<T>> params_;
  std::vector<Tensor<T>> m_, v_;
  long long t_ = 0;
  double beta1_ = 0.5, beta2_ = 0.999, eps_ = 1e-8;
};

/// History of translated images. Until full, every incoming image is stored
/// and returned. Once full, each image is returned as is with probability
/// 1/2, otherwise a uniformly chosen stored image is returned and replaced
/// by it. Capacity 0 passes images straight through.
template <typename T> class ReplayPool {
public:
  explicit ReplayPool(std::size_t capacity = 50) : capacity_(capacity) {}

  Tensor<T> query(const Tensor<T> &batch, Rng &rng) {
    if (capacity_ == 0) return batch;
    const Shape s = batch.shape();
    const Shape one{1, s.c, s.h, s.w};
    Tensor<T> out(s);
    for (std::size_t n = 0; n < s.n; ++n) {
      Tensor<T> img = batch.sample(n);
      Tensor<T> chosen = img;
      if (images_.size() < capacity_) {
        images_.push_back(img);
      } else if (rng.uniform() < 0.5) {
        const std::size_t k = rng.index(capacity_);
        chosen = images_[k];
        images_[k] = img;
      }
      require(chosen.shape() == one, "replay pool: image extent changed");
      std::copy(chosen.values().begin(), chosen.values().end(), out.data() + n * one.size());
    }
    return out;
  }

  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return images_.size(); }
  std::vector<Tensor<T>> &images() { return images_; }
  const std::vector<Tensor<T>> &images() const { return images_; }

private:
  std::size_t capacity_;
  std::vector<Tensor<T>> images_;
};

/// FNV-1a over the loss-log lines, with a line count.
struct LogDigest {
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  std::uint64_t lines = 0;

  void add(const std::string &line) {
    for (unsigned char c : line) {
      hash ^= c;
      hash *= 0x100000001b3ULL;
    }
    ++lines;
  }
  friend bool operator==(const LogDigest &, const LogDigest &) = default;
};

inline constexpr const char *kLossLogHeader = "step,gan,cycle,identity,ssim,generator_total,dis_ct,dis_mr";

inline std::string loss_log_line(long long step, const LossBreakdown &b) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%lld,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", step, b.gan, b.cycle, b.identity,
                b.ssim, b.generator_total, b.dis_ct, b.dis_mr);
  return buf;
}

template <typename T> struct TrainState {
  RunConfig config;
  ModelBundle<T> bundle;
  Adam<T> opt_g, opt_dis_ct, opt_dis_mr;
  long long step = 0;
  long long epoch = 0;
  Rng rng;
  ReplayPool<T> pool_ct, pool_mr;
  LogDigest log_digest;

  explicit TrainState(const RunConfig &cfg)
      : config(cfg), bundle(cfg.generator, cfg.discriminator, cfg.train.seed),
        rng(cfg.train.seed, {0x7E7E}),
        pool_ct(static_cast<std::size_t>(cfg.train.replay_buffer_size)),
        pool_mr(static_cast<std::size_t>(cfg.train.replay_buffer_size)) {
    cfg.validate();
    rebuild_optimizers();
  }

  TrainState(const TrainState &) = delete;
  TrainState &operator=(const TrainState &) = delete;

  void rebuild_optimizers() {
    const auto &t = config.train;
    std::vector<Var<T>> g;
    for (auto &p : bundle.gen_ct.params().items()) g.push_back(p.var);
    for (auto &p : bundle.gen_mr.params().items()) g.push_back(p.var);
    auto vars = [](ParamSet<T> &ps) {
      std::vector<Var<T>> out;
      for (auto &p : ps.items()) out.push_back(p.var);
      return out;
    };
    opt_g = Adam<T>(std::move(g), t.adam_beta1, t.adam_beta2);
    opt_dis_ct = Adam<T>(vars(bundle.dis_ct.params()), t.adam_beta1, t.adam_beta2);
    opt_dis_mr = Adam<T>(vars(bundle.dis_mr.params()), t.adam_beta1, t.adam_beta2);
  }
};

inline void check_finite(double v, const char *term, long long step) {
  if (!std::isfinite(v))
    throw NumericalError("non-finite " + std::string(term) + " loss (" + std::to_string(v) + ") at step " +
                         std::to_string(step));
}

/// Mean SSIM term over the two (input, translation) pairs, or the batch
/// formula over the two translations in literal mode.
template <typename T>
Var<T> ssim_objective(const Var<T> &ct, const Var<T> &fake_mr, const Var<T> &mr, const Var<T> &fake_ct,
                      SsimMode mode, const SsimConstants &k) {
  if (mode == SsimMode::Literal) return ssim_literal_loss(fake_mr, fake_ct, k);
  return affine(add(ssim_loss(ct, fake_mr, k, mode), ssim_loss(mr, fake_ct, k, mode)), T(0.5), T(0));
}

/// Learning rate for a step: constant, then linear decay to 0 from epoch
/// lr_decay_start to the end of the schedule.
inline double scheduled_lr(const TrainConfig &t, long long step, long long steps_per_epoch) {
  const long long start = static_cast<long long>(t.lr_decay_start) * steps_per_epoch;
  const long long end = static_cast<long long>(t.epochs) * steps_per_epoch;
  if (step < start || end <= start) return t.lr;
  return t.lr * std::max(0.0, 1.0 - static_cast<double>(step - start) / static_cast<double>(end - start));
}

template <typename T> struct GeneratorObjective {
  Var<T> total; // weighted sum of the terms with non-zero weight
  LossBreakdown parts;
  Var<T> fake_mr, fake_ct;
};

/// Forward pass of both generators and every generator-side term. Terms with
/// zero weight are evaluated for the log only and stay out of `total`.
template <typename T>
GeneratorObjective<T> generator_objective(ModelBundle<T> &b, const Tensor<T> &ct_batch,
                                          const Tensor<T> &mr_batch, const TrainConfig &tc, long long step = 0) {
  const auto &w = tc.weights;
  GeneratorObjective<T> o;
  const Var<T> ct(ct_batch), mr(mr_batch);
  o.fake_mr = b.gen_mr.forward(ct);
  const Var<T> rec_ct = b.gen_ct.forward(o.fake_mr);
  o.fake_ct = b.gen_ct.forward(mr);
  const Var<T> rec_mr = b.gen_mr.forward(o.fake_ct);

  const Var<T> gan = gan_loss(b.dis_mr.forward(o.fake_mr), b.dis_ct.forward(o.fake_ct));
  const Var<T> cyc = cycle_loss(mr, rec_mr, ct, rec_ct);
  Var<T> idl;
  if (w.lambda_id > 0) {
    idl = identity_loss(b.gen_ct.forward(ct), ct, b.gen_mr.forward(mr), mr);
  } else {
    const Var<T> id_ct(b.gen_ct.infer(ct_batch)), id_mr(b.gen_mr.infer(mr_batch));
    idl = identity_loss(id_ct, ct, id_mr, mr);
  }
  const Var<T> ssim = w.lambda_ssim > 0
                          ? ssim_objective(ct, o.fake_mr, mr, o.fake_ct, tc.ssim_mode, tc.ssim_constants)
                          : ssim_objective(ct, o.fake_mr.detach(), mr, o.fake_ct.detach(), tc.ssim_mode,
                                           tc.ssim_constants);

  auto &out = o.parts;
  out.gan = gan.value().item();
  out.cycle = cyc.value().item();
  out.identity = idl.value().item();
  out.ssim = ssim.value().item();
  check_finite(out.gan, "gan", step);
  check_finite(out.cycle, "cycle", step);
  check_finite(out.identity, "identity", step);
  check_finite(out.ssim, "ssim", step);

  std::vector<Var<T>> terms{gan};
  std::vector<T> weights{T(1)};
  if (w.lambda_cyc > 0) terms.push_back(cyc), weights.push_back(static_cast<T>(w.lambda_cyc));
  if (w.lambda_id > 0) terms.push_back(idl), weights.push_back(static_cast<T>(w.lambda_id));
  if (w.lambda_ssim > 0) terms.push_back(ssim), weights.push_back(static_cast<T>(w.lambda_ssim));
  o.total = weighted_sum(terms, weights);
  out.generator_total = generator_total_loss(out, w);
  check_finite(out.generator_total, "generator_total", step);
  return o;
}

/// One optimization iteration on a (CT batch, MR batch) pair of N x 1 x H x W
/// tensors: a joint generator update, then each discriminator.
template <typename T>
LossBreakdown train_step(TrainState<T> &st, const Tensor<T> &ct_batch, const Tensor<T> &mr_batch, double lr) {
  auto &b = st.bundle;
  const long long step = st.step + 1;
  LossBreakdown out;
  Tensor<T> fake_mr_t, fake_ct_t;

  b.gen_ct.params().zero_grad();
  b.gen_mr.params().zero_grad();
  {
    FrozenParams<T> freeze_ct(b.dis_ct.params()), freeze_mr(b.dis_mr.params());
    auto obj = generator_objective(b, ct_batch, mr_batch, st.config.train, step);
    out = obj.parts;
    if (obj.total.requires_grad()) backward(obj.total);
    fake_mr_t = obj.fake_mr.value();
    fake_ct_t = obj.fake_ct.value();
  }
  st.opt_g.step(lr);

  // Discriminators, each on real images and replayed translations.
  auto dis_step = [&](Discriminator<T> &d, Adam<T> &opt, ReplayPool<T> &pool, const Tensor<T> &real,
                      const Tensor<T> &fake, const char *name) {
    const Tensor<T> replayed = pool.query(fake, st.rng);
    d.params().zero_grad();
    const Var<T> loss = discriminator_loss(d.forward(Var<T>(real)), d.forward(Var<T>(replayed)));
    const double v = loss.value().item();
    check_finite(v, name, step);
    backward(loss);
    opt.step(lr);
    return v;
  };
  out.dis_ct = dis_step(b.dis_ct, st.opt_dis_ct, st.pool_ct, ct_batch, fake_ct_t, "dis_ct");
  out.dis_mr = dis_step(b.dis_mr, st.opt_dis_mr, st.pool_mr, mr_batch, fake_mr_t, "dis_mr");
  st.step = step;
  return out;
}

// ---- checkpoints ----

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[8] = {'C', 'T', 'M', 'R', 'C', 'K', 'P', 'T'};

namespace detail {

class ByteWriter {
public:
  void raw(const void *p, std::size_t n) {
    const auto *c = static_cast<const unsigned char *>(p);
    bytes_.insert(bytes_.end(), c, c + n);
  }
  template <typename I> void integer(I v) {
    for (std::size_t i = 0; i < sizeof(I); ++i) bytes_.push_back(static_cast<unsigned char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xFF));
  }
  void string(const std::string &s) {
    integer<std::uint64_t>(s.size());
    raw(s.data(), s.size());
  }
  template <typename T> void tensor(const Tensor<T> &t) {
    const Shape s = t.shape();
    integer<std::uint8_t>(t.empty() ? 0 : 1);
    for (std::size_t d : {s.n, s.c, s.h, s.w}) integer<std::uint64_t>(d);
    if (t.empty()) return;
    for (T v : t.values()) {
      using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
      integer<U>(std::bit_cast<U>(v));
    }
  }
  std::vector<unsigned char> &bytes() { return bytes_; }

private:
  std::vector<unsigned char> bytes_;
};

class ByteReader {
public:
  ByteReader(const std::vector<unsigned char> &b, std::size_t end, std::string where)
      : b_(b), end_(end), where_(std::move(where)) {}

  void raw(void *p, std::size_t n) {
    need(n);
    std::memcpy(p, b_.data() + pos_, n);
    pos_ += n;
  }
  template <typename I> I integer() {
    need(sizeof(I));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(I); ++i) v |= static_cast<std::uint64_t>(b_[pos_ + i]) << (8 * i);
    pos_ += sizeof(I);
    return static_cast<I>(v);
  }
  std::string string() {
    const auto n = integer<std::uint64_t>();
    need(n);
    std::string s(reinterpret_cast<const char *>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  template <typename T> Tensor<T> tensor() {
    const bool present = integer<std::uint8_t>() != 0;
    Shape s;
    s.n = integer<std::uint64_t>();
    s.c = integer<std::uint64_t>();
    s.h = integer<std::uint64_t>();
    s.w = integer<std::uint64_t>();
    if (!present) return Tensor<T>();
    using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
    if (s.size() > (end_ - pos_) / sizeof(U)) fail();
    Tensor<T> t(s);
    for (auto &v : t.values()) v = std::bit_cast<T>(integer<U>());
    return t;
  }
  bool at_end() const { return pos_ == end_; }

private:
  void need(std::size_t n) {
    if (n > end_ - pos_) fail();
  }
  [[noreturn]] void fail() const { throw IoError(where_ + ": truncated or corrupt checkpoint"); }

  const std::vector<unsigned char> &b_;
  std::size_t end_;
  std::size_t pos_ = 0;
  std::string where_;
};

inline std::uint64_t fnv1a(const unsigned char *p, std::size_t n) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

template <typename T> void write_params(ByteWriter &w, ModelBundle<T> &b) {
  std::vector<std::pair<std::string, Var<T>>> all;
  b.for_each_param([&](const std::string &name, Var<T> &v) { all.emplace_back(name, v); });
  w.integer<std::uint64_t>(all.size());
  for (const auto &[name, v] : all) {
    w.string(name);
    w.tensor(v.value());
  }
}

} // namespace detail

template <typename T> std::vector<unsigned char> serialize_checkpoint(TrainState<T> &st) {
  detail::ByteWriter w;
  w.raw(kCheckpointMagic, 8);
  w.integer<std::uint32_t>(kCheckpointVersion);
  w.integer<std::uint32_t>(sizeof(T));
  w.string(to_text(st.config));
  w.integer<std::int64_t>(st.step);
  w.integer<std::int64_t>(st.epoch);
  w.string(st.rng.serialize());
  detail::write_params(w, st.bundle);
  for (auto *opt : {&st.opt_g, &st.opt_dis_ct, &st.opt_dis_mr}) {
    w.integer<std::int64_t>(opt->t());
    w.integer<std::uint64_t>(opt->m().size());
    for (std::size_t k = 0; k < opt->m().size(); ++k) {
      w.tensor(opt->m()[k]);
      w.tensor(opt->v()[k]);
    }
  }
  for (auto *pool : {&st.pool_ct, &st.pool_mr}) {
    w.integer<std::uint64_t>(pool->capacity());
    w.integer<std::uint64_t>(pool->size());
    for (const auto &img : pool->images()) w.tensor(img);
  }
  w.integer<std::uint64_t>(st.log_digest.hash);
  w.integer<std::uint64_t>(st.log_digest.lines);
  const auto h = detail::fnv1a(w.bytes().data(), w.bytes().size());
  w.integer<std::uint64_t>(h);
  return std::move(w.bytes());
}

inline std::vector<unsigned char> read_file_bytes(const fs::path &path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read " + path.string());
  return std::vector<unsigned char>((std::istreambuf_iterator<char>(is)), {});
}

inline void write_file_atomic(const fs::path &path, const std::vector<unsigned char> &bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write " + tmp.string());
    os.write(reinterpret_cast<const char *>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    os.flush();
    if (!os) throw IoError("write failed: " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

template <typename T> void save_checkpoint(TrainState<T> &st, const fs::path &path) {
  write_file_atomic(path, serialize_checkpoint(st));
}

/// Reads the configuration stored in a checkpoint without building models.
inline RunConfig read_checkpoint_config(const std::vector<unsigned char> &bytes, const std::string &where,
                                        std::uint32_t *scalar_size = nullptr) {
  if (bytes.size() < 8 + 4 + 4 + 8 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0)
    throw IoError(where + ": not a checkpoint file");
  const std::size_t body = bytes.size() - 8;
  std::uint64_t stored = 0;
  for (std::size_t i = 0; i < 8; ++i) stored |= static_cast<std::uint64_t>(bytes[body + i]) << (8 * i);
  detail::ByteReader r(bytes, body, where);
  char magic[8];
  r.raw(magic, 8);
  const auto version = r.integer<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw VersionError(where + ": checkpoint format version " + std::to_string(version) + " is incompatible with " +
                       std::to_string(kCheckpointVersion));
  if (detail::fnv1a(bytes.data(), body) != stored) throw IoError(where + ": truncated or corrupt checkpoint");
  const auto ss = r.integer<std::uint32_t>();
  if (scalar_size) *scalar_size = ss;
  try {
    return parse_config(r.string());
  } catch (const ValidationError &e) {
    throw IoError(where + ": bad configuration block: " + e.what());
  }
}

template <typename T> std::unique_ptr<TrainState<T>> deserialize_checkpoint(const std::vector<unsigned char> &bytes,
                                                                           const std::string &where) {
  std::uint32_t ss = 0;
  const RunConfig cfg = read_checkpoint_config(bytes, where, &ss);
  if (ss != sizeof(T))
    throw VersionError(where + ": checkpoint stores " + std::to_string(ss) + "-byte scalars, expected " +
                       std::to_string(sizeof(T)));
  auto st = std::make_unique<TrainState<T>>(cfg);
  detail::ByteReader r(bytes, bytes.size() - 8, where);
  char magic[8];
  r.raw(magic, 8);
  r.integer<std::uint32_t>();
  r.integer<std::uint32_t>();
  r.string();
  st->step = r.integer<std::int64_t>();
  st->epoch = r.integer<std::int64_t>();
  st->rng.deserialize(r.string());

  std::vector<std::pair<std::string, Var<T>>> all;
  st->bundle.for_each_param([&](const std::string &name, Var<T> &v) { all.emplace_back(name, v); });
  if (r.integer<std::uint64_t>() != all.size()) throw IoError(where + ": parameter count mismatch");
  for (auto &[name, v] : all) {
    const std::string stored = r.string();
    Tensor<T> t = r.tensor<T>();
    if (stored != name || t.shape() != v.shape())
      throw IoError(where + ": parameter " + stored + " does not match architecture (" + name + ")");
    v.mutable_value() = std::move(t);
  }
  for (auto *opt : {&st->opt_g, &st->opt_dis_ct, &st->opt_dis_mr}) {
    opt->set_t(r.integer<std::int64_t>());
    if (r.integer<std::uint64_t>() != opt->m().size()) throw IoError(where + ": optimizer state mismatch");
    for (std::size_t k = 0; k < opt->m().size(); ++k) {
      opt->m()[k] = r.tensor<T>();
      opt->v()[k] = r.tensor<T>();
      if (opt->m()[k].shape() != opt->params()[k].shape() || opt->v()[k].shape() != opt->params()[k].shape())
        throw IoError(where + ": optimizer state shape mismatch");
    }
  }
  for (auto *pool : {&st->pool_ct, &st->pool_mr}) {
    const auto cap = r.integer<std::uint64_t>();
    const auto n = r.integer<std::uint64_t>();
    if (cap != pool->capacity() || n > cap) throw IoError(where + ": replay pool mismatch");
    pool->images().clear();
    for (std::uint64_t i = 0; i < n; ++i) pool->images().push_back(r.tensor<T>());
  }
  st->log_digest.hash = r.integer<std::uint64_t>();
  st->log_digest.lines = r.integer<std::uint64_t>();
  if (!r.at_end()) throw IoError(where + ": trailing bytes in checkpoint");
  return st;
}

template <typename T> std::unique_ptr<TrainState<T>> load_checkpoint(const fs::path &path) {
  return deserialize_checkpoint<T>(read_file_bytes(path), path.string());
}

/// Architecture must match; other differences are reported as warnings.
inline std::vector<std::string> checkpoint_compatibility(const RunConfig &stored, const RunConfig &current) {
  if (!(stored.generator == current.generator) || !(stored.discriminator == current.discriminator))
    throw ValidationError("checkpoint architecture differs from the configuration (generator/discriminator)");
  std::vector<std::string> warnings;
  if (!(stored.train.weights == current.train.weights))
    warnings.push_back("loss weights differ from the checkpoint (training-time only)");
  if (stored.train.ssim_mode != current.train.ssim_mode) warnings.push_back("ssim_mode differs from the checkpoint");
  return warnings;
}

// ---- fit ----

struct FitResult {
  fs::path final_checkpoint;
  fs::path loss_log;
  std::vector<LossBreakdown> log; // steps run in this call
  long long steps_per_epoch = 0;
  long long total_steps = 0;
};

inline long long steps_per_epoch(const SliceLoader &loader, int batch_size) {
  const auto n = static_cast<long long>(loader.epoch_length());
  return (n + batch_size - 1) / batch_size;
}

inline fs::path step_checkpoint_path(const fs::path &out_dir, long long step) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "step_%08lld.ckpt", step);
  return out_dir / "checkpoints" / buf;
}

template <typename T> std::pair<Tensor<T>, Tensor<T>> make_batch(const SliceLoader &loader, long long epoch,
                                                                 long long first, int count, unsigned threads) {
  const auto pairs = loader.batch(static_cast<std::size_t>(epoch), static_cast<std::size_t>(first),
                                  static_cast<std::size_t>(count), threads);
  std::vector<Image> ct, mr;
  for (const auto &[c, m] : pairs) {
    ct.push_back(c.pixels);
    mr.push_back(m.pixels);
  }
  return {to_tensor<T>(std::span<const Image>(ct)), to_tensor<T>(std::span<const Image>(mr))};
}

/// Keeps the lines of an existing log up to `step` and checks them against
/// the checkpoint digest.
inline std::vector<std::string> resume_log_lines(const fs::path &log_path, const LogDigest &expected) {
  std::vector<std::string> kept;
  LogDigest d;
  if (expected.lines == 0) return kept;
  std::ifstream is(log_path);
  if (!is) throw IoError("resume: loss log " + log_path.string() + " is missing");
  std::string line;
  std::getline(is, line);
  while (kept.size() < expected.lines && std::getline(is, line)) {
    line += "\n";
    d.add(line);
    kept.push_back(line);
  }
  if (!(d == expected)) throw IoError("resume: loss log " + log_path.string() + " does not match the checkpoint");
  return kept;
}

/// Runs train_steps from st.step to the end of the schedule (or max_steps),
/// writing out_dir/loss_log.csv, periodic checkpoints and out_dir/final.ckpt.
template <typename T>
FitResult fit(TrainState<T> &st, const SliceLoader &loader, const fs::path &out_dir, std::ostream *progress = nullptr) {
  const auto &tc = st.config.train;
  FitResult res;
  res.steps_per_epoch = steps_per_epoch(loader, tc.batch_size);
  res.total_steps = static_cast<long long>(tc.epochs) * res.steps_per_epoch;
  if (tc.max_steps > 0) res.total_steps = std::min(res.total_steps, tc.max_steps);
  res.loss_log = out_dir / "loss_log.csv";
  res.final_checkpoint = out_dir / "final.ckpt";
  fs::create_directories(out_dir);

  const auto kept = resume_log_lines(res.loss_log, st.log_digest);
  std::ofstream log(res.loss_log, std::ios::trunc);
  if (!log) throw IoError("cannot write " + res.loss_log.string());
  log << kLossLogHeader << "\n";
  for (const auto &l : kept) log << l;
  log.flush();

  const auto threads = static_cast<unsigned>(tc.prefetch_threads);
  while (st.step < res.total_steps) {
    const long long epoch = st.step / res.steps_per_epoch, within = st.step % res.steps_per_epoch;
    st.epoch = epoch;
    const auto [ct, mr] = make_batch<T>(loader, epoch, within * tc.batch_size, tc.batch_size, threads);
    const double lr = scheduled_lr(tc, st.step, res.steps_per_epoch);
    LossBreakdown b;
    try {
      b = train_step(st, ct, mr, lr);
    } catch (...) {
      log.flush();
      throw;
    }
    const std::string line = loss_log_line(st.step, b);
    st.log_digest.add(line);
    log << line;
    log.flush();
    if (!log) throw IoError("write failed: " + res.loss_log.string());
    res.log.push_back(b);
    if (progress && tc.log_every > 0 && st.step % tc.log_every == 0)
      *progress << "step " << st.step << "/" << res.total_steps << " G=" << b.generator_total << " cyc=" << b.cycle
                << " ssim=" << b.ssim << " D_CT=" << b.dis_ct << " D_MR=" << b.dis_mr << "\n";
    if (tc.checkpoint_every > 0 && st.step % tc.checkpoint_every == 0)
      save_checkpoint(st, step_checkpoint_path(out_dir, st.step));
  }
  st.epoch = res.steps_per_epoch > 0 ? st.step / res.steps_per_epoch : 0;
  save_checkpoint(st, res.final_checkpoint);
  return res;
}

/// Reads a loss log written by fit.
inline std::vector<std::pair<long long, LossBreakdown>> read_loss_log(const fs::path &path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read " + path.string());
  std::string line;
  std::getline(is, line);
  if (detail::trim(line) != kLossLogHeader) throw ValidationError(path.string() + ":1: unexpected loss log header");
  std::vector<std::pair<long long, LossBreakdown>> rows;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(detail::trim(cell));
    if (cells.size() != 8) throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": expected 8 fields");
    try {
      LossBreakdown b;
      const long long step = std::stoll(cells[0]);
      double *fields[] = {&b.gan, &b.cycle, &b.identity, &b.ssim, &b.generator_total, &b.dis_ct, &b.dis_mr};
      for (std::size_t i = 0; i < 7; ++i) {
        std::size_t used = 0;
        *fields[i] = std::stod(cells[i + 1], &used);
        if (used != cells[i + 1].size()) throw std::invalid_argument(cells[i + 1]);
      }
      rows.emplace_back(step, b);
    } catch (const std::exception &) {
      throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": malformed loss log line");
    }
  }
  return rows;
}

} // namespace ctmr
