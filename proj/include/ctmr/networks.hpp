#pragma once

// ResNet generator and patch discriminator.
//
// Generator (defaults: base b = 64, 9 residual blocks, 1 channel in/out):
//
//   layer      op                                   weight          params
//   stem       reflect(3), conv 7x7 s1, IN, ReLU    b x 1 x 7 x 7   49 b + b
//   down1      conv 3x3 s2 p1, IN, ReLU             2b x b x 3 x 3  18 b^2 + 2b
//   down2      conv 3x3 s2 p1, IN, ReLU             4b x 2b x 3 x 3 72 b^2 + 4b
//   res[i].a   reflect(1), conv 3x3, IN, ReLU       4b x 4b x 3 x 3 144 b^2 + 4b
//   res[i].b   reflect(1), conv 3x3, IN, + skip     4b x 4b x 3 x 3 144 b^2 + 4b
//   up1        convT 3x3 s2 p1 op1, IN, ReLU        4b x 2b x 3 x 3 72 b^2 + 2b
//   up2        convT 3x3 s2 p1 op1, IN, ReLU        2b x b x 3 x 3  18 b^2 + b
//   head       reflect(3), conv 7x7, tanh           1 x b x 7 x 7   49 b + 1
//
// Default total: 11,365,633 parameters.
//
// Discriminator (defaults: base b = 64, 3 strided stages), 4x4 kernels, pad 1:
//
//   conv0  s2  1 -> b, LeakyReLU(0.2)
//   conv1  s2  b -> 2b, IN, LeakyReLU
//   conv2  s2  2b -> 4b, IN, LeakyReLU
//   conv3  s1  4b -> 8b, IN, LeakyReLU
//   head   s1  8b -> 1 (raw scores)
//
// Default total: 2,762,689 parameters; a 256x256 input yields a 30x30 map.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "image.hpp"
#include "nn_ops.hpp"
#include "rng.hpp"

namespace ctmr {

enum class NormKind { Instance };
enum class PadKind { Reflect };

struct GeneratorConfig {
  int n_resblocks = 9;
  int base_channels = 64;
  int in_channels = 1;
  int out_channels = 1;
  NormKind norm = NormKind::Instance;
  PadKind pad = PadKind::Reflect;

  void validate() const {
    require(n_resblocks >= 1, "generator: n_resblocks must be >= 1");
    require(base_channels >= 8, "generator: base_channels must be >= 8");
    require(in_channels >= 1 && out_channels >= 1, "generator: channel counts must be >= 1");
  }
  friend bool operator==(const GeneratorConfig &, const GeneratorConfig &) = default;
};

struct DiscriminatorConfig {
  int n_layers = 3;
  int base_channels = 64;
  int in_channels = 1;

  void validate() const {
    require(n_layers >= 1, "discriminator: n_layers must be >= 1");
    require(base_channels >= 1, "discriminator: base_channels must be >= 1");
    require(in_channels >= 1, "discriminator: in_channels must be >= 1");
  }
  friend bool operator==(const DiscriminatorConfig &, const DiscriminatorConfig &) = default;
};

template <typename T> struct NamedParam {
  std::string name;
  Var<T> var;
};

/// Ordered, named parameter collection.
template <typename T> class ParamSet {
public:
  Var<T> add(std::string name, Shape shape) {
    Var<T> v(Tensor<T>(shape), true);
    items_.push_back({std::move(name), v});
    return v;
  }

  std::vector<NamedParam<T>> &items() { return items_; }
  const std::vector<NamedParam<T>> &items() const { return items_; }
  std::size_t count() const {
    std::size_t n = 0;
    for (const auto &p : items_) n += p.var.value().size();
    return n;
  }

  void zero_grad() {
    for (auto &p : items_) p.var.zero_grad();
  }
  void set_requires_grad(bool r) {
    for (auto &p : items_) p.var.set_requires_grad(r);
  }

  /// Weights ~ N(0, 0.02), biases = 0, drawn in declaration order.
  void init_normal(std::uint64_t seed, double stddev = 0.02) {
    Rng rng(seed);
    for (auto &p : items_) {
      auto &t = p.var.mutable_value();
      const bool is_bias = p.name.size() >= 5 && p.name.compare(p.name.size() - 5, 5, ".bias") == 0;
      for (auto &v : t.values()) v = is_bias ? T(0) : static_cast<T>(rng.normal(0.0, stddev));
    }
  }

  const NamedParam<T> *find(const std::string &name) const {
    for (const auto &p : items_)
      if (p.name == name) return &p;
    return nullptr;
  }

private:
  std::vector<NamedParam<T>> items_;
};

/// Disables gradient tracking on a parameter set for its lifetime.
template <typename T> class FrozenParams {
public:
  explicit FrozenParams(ParamSet<T> &ps) : ps_(ps) {
    for (const auto &p : ps_.items()) saved_.push_back(p.var.requires_grad());
    ps_.set_requires_grad(false);
  }
  ~FrozenParams() {
    for (std::size_t i = 0; i < saved_.size(); ++i) ps_.items()[i].var.set_requires_grad(saved_[i]);
  }
  FrozenParams(const FrozenParams &) = delete;
  FrozenParams &operator=(const FrozenParams &) = delete;

private:
  ParamSet<T> &ps_;
  std::vector<bool> saved_;
};

struct LayerInfo {
  std::string name;
  std::string op;
  Shape in, out;
  std::size_t params = 0;
};

template <typename T> class Generator {
public:
  Generator(const GeneratorConfig &cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg.validate();
    const std::size_t b = static_cast<std::size_t>(cfg.base_channels);
    const std::size_t in = static_cast<std::size_t>(cfg.in_channels);
    const std::size_t out = static_cast<std::size_t>(cfg.out_channels);
    conv("stem", {b, in, 7, 7});
    conv("down1", {2 * b, b, 3, 3});
    conv("down2", {4 * b, 2 * b, 3, 3});
    for (int i = 0; i < cfg.n_resblocks; ++i) {
      conv("res" + std::to_string(i) + ".a", {4 * b, 4 * b, 3, 3});
      conv("res" + std::to_string(i) + ".b", {4 * b, 4 * b, 3, 3});
    }
    conv("up1", {4 * b, 2 * b, 3, 3}, 2 * b);
    conv("up2", {2 * b, b, 3, 3}, b);
    conv("head", {out, b, 7, 7});
    params_.init_normal(seed);
  }

  /// x: N x in x H x W with H, W divisible by 4. Output in (-1, 1).
  Var<T> forward(const Var<T> &x) const {
    if (identity_) return x;
    require(x.shape().h % 4 == 0 && x.shape().w % 4 == 0,
            "generator input extent must be divisible by 4, got " + x.shape().str());
    std::size_t i = 0;
    auto w = [&]() -> const Var<T> & { return params_.items()[i++].var; };
    auto conv_block = [&](const Var<T> &h, std::size_t stride, std::size_t pad) {
      const Var<T> &wt = w();
      const Var<T> &bs = w();
      return conv2d(h, wt, bs, stride, pad);
    };

    Var<T> h = relu(instance_norm(conv_block(reflect_pad2d(x, 3), 1, 0)));
    h = relu(instance_norm(conv_block(h, 2, 1)));
    h = relu(instance_norm(conv_block(h, 2, 1)));
    for (int r = 0; r < cfg_.n_resblocks; ++r) {
      Var<T> y = relu(instance_norm(conv_block(reflect_pad2d(h, 1), 1, 0)));
      y = instance_norm(conv_block(reflect_pad2d(y, 1), 1, 0));
      h = add(h, y);
    }
    for (int u = 0; u < 2; ++u) {
      const Var<T> &wt = w();
      const Var<T> &bs = w();
      h = relu(instance_norm(conv_transpose2d(h, wt, bs, 2, 1, 1)));
    }
    return tanh(conv_block(reflect_pad2d(h, 3), 1, 0));
  }

  /// Forward pass without building a graph.
  Tensor<T> infer(const Tensor<T> &x) {
    FrozenParams<T> frozen(params_);
    return forward(Var<T>(x)).value();
  }

  /// Testing hook: replaces the network with the exact identity map.
  void set_identity(bool on) { identity_ = on; }
  bool is_identity() const { return identity_; }

  ParamSet<T> &params() { return params_; }
  const ParamSet<T> &params() const { return params_; }
  const GeneratorConfig &config() const { return cfg_; }

  std::vector<LayerInfo> summary(std::size_t h, std::size_t w) const {
    const std::size_t b = static_cast<std::size_t>(cfg_.base_channels);
    const std::size_t in = static_cast<std::size_t>(cfg_.in_channels);
    const std::size_t out = static_cast<std::size_t>(cfg_.out_channels);
    std::vector<LayerInfo> layers;
    auto count = [&](const std::string &name) {
      return params_.find(name + ".weight")->var.value().size() + params_.find(name + ".bias")->var.value().size();
    };
    layers.push_back({"stem", "reflect3+conv7x7+IN+ReLU", {1, in, h, w}, {1, b, h, w}, count("stem")});
    layers.push_back({"down1", "conv3x3/s2+IN+ReLU", {1, b, h, w}, {1, 2 * b, h / 2, w / 2}, count("down1")});
    layers.push_back(
        {"down2", "conv3x3/s2+IN+ReLU", {1, 2 * b, h / 2, w / 2}, {1, 4 * b, h / 4, w / 4}, count("down2")});
    for (int r = 0; r < cfg_.n_resblocks; ++r) {
      const std::string n = "res" + std::to_string(r);
      layers.push_back({n, "resblock(2x reflect1+conv3x3+IN)", {1, 4 * b, h / 4, w / 4}, {1, 4 * b, h / 4, w / 4},
                        count(n + ".a") + count(n + ".b")});
    }
    layers.push_back(
        {"up1", "convT3x3/s2+IN+ReLU", {1, 4 * b, h / 4, w / 4}, {1, 2 * b, h / 2, w / 2}, count("up1")});
    layers.push_back({"up2", "convT3x3/s2+IN+ReLU", {1, 2 * b, h / 2, w / 2}, {1, b, h, w}, count("up2")});
    layers.push_back({"head", "reflect3+conv7x7+tanh", {1, b, h, w}, {1, out, h, w}, count("head")});
    return layers;
  }

private:
  void conv(const std::string &name, Shape wshape, std::size_t bias_channels = 0) {
    params_.add(name + ".weight", wshape);
    params_.add(name + ".bias", Shape{1, bias_channels ? bias_channels : wshape.n, 1, 1});
  }

  GeneratorConfig cfg_;
  ParamSet<T> params_;
  bool identity_ = false;
};

template <typename T> class Discriminator {
public:
  Discriminator(const DiscriminatorConfig &cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg.validate();
    std::size_t prev = static_cast<std::size_t>(cfg.in_channels);
    for (int i = 0; i <= cfg.n_layers; ++i) {
      const std::size_t ch = channels(i);
      params_.add("conv" + std::to_string(i) + ".weight", Shape{ch, prev, 4, 4});
      params_.add("conv" + std::to_string(i) + ".bias", Shape{1, ch, 1, 1});
      prev = ch;
    }
    params_.add("head.weight", Shape{1, prev, 4, 4});
    params_.add("head.bias", Shape{1, 1, 1, 1});
    params_.init_normal(seed);
  }

  /// Raw patch scores, N x 1 x H' x W'.
  Var<T> forward(const Var<T> &x) const {
    const auto &it = params_.items();
    Var<T> h = x;
    for (int i = 0; i <= cfg_.n_layers; ++i) {
      const std::size_t stride = i < cfg_.n_layers ? 2 : 1;
      h = conv2d(h, it[2 * i].var, it[2 * i + 1].var, stride, 1);
      if (i > 0) h = instance_norm(h);
      h = leaky_relu(h, T(0.2));
    }
    const std::size_t last = 2 * static_cast<std::size_t>(cfg_.n_layers + 1);
    return conv2d(h, it[last].var, it[last + 1].var, 1, 1);
  }

  /// Score-map extent for an h x w input.
  std::pair<std::size_t, std::size_t> output_extent(std::size_t h, std::size_t w) const {
    for (int i = 0; i <= cfg_.n_layers; ++i) {
      const std::size_t s = i < cfg_.n_layers ? 2 : 1;
      h = detail::conv_out(h, 4, s, 1);
      w = detail::conv_out(w, 4, s, 1);
    }
    return {detail::conv_out(h, 4, 1, 1), detail::conv_out(w, 4, 1, 1)};
  }

  ParamSet<T> &params() { return params_; }
  const ParamSet<T> &params() const { return params_; }
  const DiscriminatorConfig &config() const { return cfg_; }

  std::vector<LayerInfo> summary(std::size_t h, std::size_t w) const {
    std::vector<LayerInfo> layers;
    std::size_t prev = static_cast<std::size_t>(cfg_.in_channels);
    const auto &it = params_.items();
    for (int i = 0; i <= cfg_.n_layers; ++i) {
      const std::size_t s = i < cfg_.n_layers ? 2 : 1;
      const std::size_t ho = detail::conv_out(h, 4, s, 1), wo = detail::conv_out(w, 4, s, 1);
      layers.push_back({"conv" + std::to_string(i),
                        std::string("conv4x4/s") + std::to_string(s) + (i > 0 ? "+IN" : "") + "+LeakyReLU",
                        {1, prev, h, w},
                        {1, channels(i), ho, wo},
                        it[2 * i].var.value().size() + it[2 * i + 1].var.value().size()});
      prev = channels(i);
      h = ho;
      w = wo;
    }
    const std::size_t last = 2 * static_cast<std::size_t>(cfg_.n_layers + 1);
    layers.push_back({"head", "conv4x4/s1", {1, prev, h, w},
                      {1, 1, detail::conv_out(h, 4, 1, 1), detail::conv_out(w, 4, 1, 1)},
                      it[last].var.value().size() + it[last + 1].var.value().size()});
    return layers;
  }

private:
  std::size_t channels(int i) const {
    return static_cast<std::size_t>(cfg_.base_channels) * static_cast<std::size_t>(std::min(1 << i, 8));
  }

  DiscriminatorConfig cfg_;
  ParamSet<T> params_;
};

/// The two generators and two discriminators of the translation model.
///   gen_mr: CT -> MR, gen_ct: MR -> CT
///   dis_mr judges MR images, dis_ct judges CT images.
template <typename T> struct ModelBundle {
  Generator<T> gen_ct, gen_mr;
  Discriminator<T> dis_ct, dis_mr;

  ModelBundle(const GeneratorConfig &g, const DiscriminatorConfig &d, std::uint64_t seed)
      : gen_ct(g, derive_seed(seed, {1})), gen_mr(g, derive_seed(seed, {2})), dis_ct(d, derive_seed(seed, {3})),
        dis_mr(d, derive_seed(seed, {4})) {}

  Generator<T> &generator_to(Modality m) { return m == Modality::CT ? gen_ct : gen_mr; }
  const Generator<T> &generator_to(Modality m) const { return m == Modality::CT ? gen_ct : gen_mr; }
  Discriminator<T> &discriminator_of(Modality m) { return m == Modality::CT ? dis_ct : dis_mr; }

  /// Every parameter, prefixed by its network name.
  template <typename F> void for_each_param(F &&f) {
    auto visit = [&](const char *prefix, ParamSet<T> &ps) {
      for (auto &p : ps.items()) f(std::string(prefix) + "." + p.name, p.var);
    };
    visit("G_CT", gen_ct.params());
    visit("G_MR", gen_mr.params());
    visit("D_CT", dis_ct.params());
    visit("D_MR", dis_mr.params());
  }
};

template <typename T> struct CycleOutputs {
  Var<T> translated, recovered, identity_output;
};

/// translated = G_target(x), recovered = G_source(translated) and, when a
/// target-domain batch is supplied, identity_output = G_target(target_input).
template <typename T>
CycleOutputs<T> forward_cycle(const ModelBundle<T> &m, const Var<T> &x, Modality x_modality, Direction dir,
                              const Var<T> *target_input = nullptr) {
  if (x_modality != source_modality(dir))
    throw ValidationError("forward_cycle: " + to_string(x_modality) + " input for direction " + to_string(dir));
  const auto &g_target = m.generator_to(target_modality(dir));
  const auto &g_source = m.generator_to(source_modality(dir));
  CycleOutputs<T> out;
  out.translated = g_target.forward(x);
  out.recovered = g_source.forward(out.translated);
  if (target_input) out.identity_output = g_target.forward(*target_input);
  return out;
}

inline std::string format_summary(const std::string &title, const std::vector<LayerInfo> &layers) {
  std::ostringstream os;
  std::size_t total = 0;
  os << title << "\n";
  for (const auto &l : layers) {
    os << "  " << l.name << "  " << l.op << "  " << l.in.str() << " -> " << l.out.str() << "  params=" << l.params
       << "\n";
    total += l.params;
  }
  os << "  total params=" << total << "\n";
  return os.str();
}

} // namespace ctmr
