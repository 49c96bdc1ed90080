// Acceptance run: one PASS/FAIL line per criterion, tolerances and runtime
// budgets fixed below. Usage: acceptance [--work DIR] [criterion ...]

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <set>

#include "ctmr/ctmr.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

#ifndef CTMR_CLI
#error "CTMR_CLI must name the command-line binary"
#endif

using namespace ctmr;
using namespace ctmr::testing;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string &what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + std::string("failed: ") + what;
    }
  }
  void note(const std::string &s) { detail += (detail.empty() ? "" : "; ") + s; }
};

std::string fmt(const char *f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

fs::path g_work;

fs::path fresh(const std::string &name) {
  const fs::path p = g_work / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// Phantom pairs exported once per acceptance run.
fs::path phantom_dir(std::size_t n, std::uint64_t seed) {
  const fs::path p = g_work / ("phantoms_" + std::to_string(n) + "_" + std::to_string(seed));
  if (!fs::exists(p / "done")) {
    fs::remove_all(p);
    PhantomSpec spec;
    spec.image_size = 64;
    spec.seed = seed;
    export_phantom_dataset(spec, n, p);
    std::ofstream(p / "done") << n << "\n";
  }
  return p;
}

Image random_image(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  Image img(n, n);
  for (auto &v : img.pixels) v = rng.uniform(-1, 1);
  return img;
}

RunConfig phantom_run_config() {
  RunConfig c;
  c.preprocess.target_slices = 1;
  c.preprocess.resize_dim = 72;
  c.preprocess.crop_dim = 64;
  c.min_extent = 64;
  return c;
}

// ---- 1: loss oracles ----

constexpr double kLossOracleTol = 1e-12, kSsimOracleTol = 1e-10;

Outcome loss_oracles() {
  Outcome o;
  double worst = 0, worst_ssim = 0;
  std::uint64_t seed = 100;
  for (Shape s : {Shape{4, 1, 30, 30}, Shape{4, 1, 64, 64}}) {
    auto v = [&] { return Var<double>(random_tensor(s, seed++)); };
    const auto a = v(), b = v(), c = v(), d = v();
    const double l1 = l1_oracle(b.value(), a.value()) + l1_oracle(d.value(), c.value());
    worst = std::max({worst,
                      rel_err(gan_loss(a, b).value().item(), lsgan_oracle(a.value(), 1) + lsgan_oracle(b.value(), 1)),
                      rel_err(discriminator_loss(a, b).value().item(),
                              lsgan_oracle(a.value(), 1) + lsgan_oracle(b.value(), 0)),
                      rel_err(cycle_loss(a, b, c, d).value().item(), l1),
                      rel_err(identity_loss(d, c, b, a).value().item(), l1)});
    const SsimConstants k;
    worst_ssim = std::max({worst_ssim, rel_err(ssim_loss(a, b, k).value().item(), ssim_global_oracle(a.value(), b.value(), k)),
                           rel_err(ssim_loss(a, b, k, SsimMode::Windowed).value().item(),
                                   ssim_windowed_oracle(a.value(), b.value(), k))});
  }
  o.require(worst < kLossOracleTol, "gan/cycle/identity/discriminator rel err");
  o.require(worst_ssim < kSsimOracleTol, "ssim rel err");
  o.note("max rel err " + fmt("%.2e", worst) + " (< 1e-12), ssim " + fmt("%.2e", worst_ssim) + " (< 1e-10)");
  return o;
}

// ---- 2: gradient checks ----

constexpr double kGradTol = 1e-3;
constexpr std::size_t kMinSampled = 10;

Outcome gradient_checks() {
  Outcome o;
  const RunConfig cfg = toy_config();
  ModelBundle<double> b(cfg.generator, cfg.discriminator, 40);
  const Var<double> ct(random_tensor(Shape{1, 1, 16, 16}, 41)), mr(random_tensor(Shape{1, 1, 16, 16}, 42));
  const auto leaves = gen_leaves(b);
  double worst = 0;
  std::size_t fewest = SIZE_MAX;
  auto record = [&](const GradCheckResult &r, const std::string &name) {
    worst = std::max(worst, r.max_rel_err);
    fewest = std::min(fewest, r.checked);
    o.require(r.checked >= kMinSampled && r.max_rel_err < kGradTol, name);
  };
  const std::vector<std::pair<std::string, std::function<Var<double>()>>> terms{
      {"gan", [&] { return gan_loss(b.dis_mr.forward(b.gen_mr.forward(ct)), b.dis_ct.forward(b.gen_ct.forward(mr))); }},
      {"cycle",
       [&] { return cycle_loss(mr, b.gen_mr.forward(b.gen_ct.forward(mr)), ct, b.gen_ct.forward(b.gen_mr.forward(ct))); }},
      {"identity", [&] { return identity_loss(b.gen_ct.forward(ct), ct, b.gen_mr.forward(mr), mr); }},
      {"ssim", [&] {
         return ssim_objective(ct, b.gen_mr.forward(ct), mr, b.gen_ct.forward(mr), SsimMode::Global, SsimConstants{});
       }}};
  for (const auto &[name, f] : terms) record(grad_check(f, leaves, 1, 43, kStep, kFloor, true), name);

  std::vector<Var<double>> dl;
  for (auto &p : b.dis_mr.params().items()) dl.push_back(p.var);
  const Var<double> fake(b.gen_mr.infer(ct.value()));
  record(grad_check([&] { return discriminator_loss(b.dis_mr.forward(mr), b.dis_mr.forward(fake)); }, dl, 3, 44, kStep,
                    kFloor, true),
         "discriminator");

  RunConfig c2 = cfg;
  for (double lambda_ssim : {0.0, 1.0}) {
    c2.train.weights.lambda_ssim = lambda_ssim;
    ModelBundle<double> m(c2.generator, c2.discriminator, 50);
    const Tensor<double> x = random_tensor(Shape{1, 1, 16, 16}, 51), y = random_tensor(Shape{1, 1, 16, 16}, 52);
    FrozenParams<double> fa(m.dis_ct.params()), fb(m.dis_mr.params());
    record(grad_check([&] { return generator_objective(m, x, y, c2.train).total; }, gen_leaves(m), 1, 53, kStep, kFloor,
                      true),
           "composite lambda_ssim=" + fmt("%g", lambda_ssim));
  }
  o.note("7 checks, >= " + std::to_string(fewest) + " parameters each, max rel err " + fmt("%.2e", worst) +
         " (< 1e-3)");
  return o;
}

// ---- 3: metric oracles ----

constexpr double kMiTol = 1e-12, kFidTol = 1e-10, kLn2Tol = 1e-9;
constexpr double kRoundingTol = 4 * std::numeric_limits<double>::epsilon();

Outcome metric_oracles() {
  Outcome o;
  const Image x = random_image(32, 1), y = random_image(32, 2);
  const double self = ssim_index(x, x);
  // 2 mx my and mx^2 + my^2 round differently, so 1 holds to fp rounding.
  o.require(std::abs(self - 1.0) <= kRoundingTol, "ssim_index(x, x) == 1 (got " + fmt("%.17g", self) + ")");

  Image two(8, 8);
  for (std::size_t i = 0; i < two.size(); ++i) two.pixels[i] = i % 2 ? 0.5 : -0.5;
  const double ln2 = mutual_information(two, two, 2);
  o.require(std::abs(ln2 - std::log(2.0)) <= kLn2Tol, "two-level mi == ln 2");

  double mi_err = 0;
  for (std::size_t bins : {2u, 16u, 64u}) {
    Image b = random_image(64, 11);
    const Image a = random_image(64, 10);
    for (std::size_t i = 0; i < b.size(); ++i) b.pixels[i] = 0.6 * a.pixels[i] + 0.4 * b.pixels[i];
    mi_err = std::max(mi_err, std::abs(mutual_information(a, b, bins) - mi_entropy_oracle(a, b, bins)));
  }
  o.require(mi_err < kMiTol, "mi vs histogram oracle");

  double pix_err = 0;
  const double base = pixacc(x, y);
  for (double c : {0.25, 3.0, 1e3, 1e-3}) {
    Image ys = y;
    for (auto &v : ys.pixels) v *= c;
    pix_err = std::max(pix_err, std::abs(pixacc(x, ys) - base));
  }
  o.require(pix_err <= kRoundingTol, "pixacc scale invariance");

  const EmbeddingExtractor ex(ExtractorKind::FixedRandomProjection, 64, 5);
  std::vector<Image> gen, real;
  for (int i = 0; i < 5; ++i) gen.push_back(random_image(16, 40 + i));
  for (int i = 0; i < 7; ++i) real.push_back(random_image(16, 60 + i));
  const double fid_err = std::abs(fid_similarity(gen, real, ex) - fid_oracle(gen, real, ex));
  o.require(fid_err < kFidTol, "fid vs embed-normalize-dot oracle");
  o.note("ssim self " + fmt("%.17g", self) + ", ln2 err " + fmt("%.1e", std::abs(ln2 - std::log(2.0))) + ", mi err " + fmt("%.1e", mi_err) + ", pixacc drift " +
         fmt("%.1e", pix_err) + ", fid err " + fmt("%.1e", fid_err));
  return o;
}

// ---- 4: architecture contracts ----

// Hand-derived counts for the default (base 64, 9 blocks; 3 layers) networks.
constexpr std::size_t kGeneratorParams = 11365633, kDiscriminatorParams = 2762689;

std::size_t conv_extent(std::size_t n, std::size_t k, std::size_t s, std::size_t p) { return (n + 2 * p - k) / s + 1; }

Outcome architecture() {
  Outcome o;
  Generator<float> g(GeneratorConfig{}, 0);
  Discriminator<float> d(DiscriminatorConfig{}, 0);
  o.require(g.params().count() == kGeneratorParams, "generator parameter count " + std::to_string(g.params().count()));
  o.require(d.params().count() == kDiscriminatorParams,
            "discriminator parameter count " + std::to_string(d.params().count()));

  const Tensor<float> x = random_tensor(Shape{1, 1, 256, 256}, 7).cast<float>();
  const Tensor<float> y = g.infer(x);
  o.require(y.shape() == x.shape(), "generator 256x256 -> 256x256");
  float lo = 1, hi = -1;
  for (float v : y.values()) lo = std::min(lo, v), hi = std::max(hi, v);
  o.require(lo > -1 && hi < 1, "generator output in (-1, 1)");

  // 4x4 kernels, padding 1: three stride-2 layers, one stride-1, then the head.
  std::size_t e = 256;
  for (int i = 0; i < 3; ++i) e = conv_extent(e, 4, 2, 1);
  e = conv_extent(conv_extent(e, 4, 1, 1), 4, 1, 1);
  const Shape map = d.forward(Var<float>(x)).shape();
  o.require(e == 30 && map.h == e && map.w == e && map.c == 1, "discriminator map " + std::to_string(map.h) + "x" +
                                                                   std::to_string(map.w));
  o.note("params " + std::to_string(kGeneratorParams) + " / " + std::to_string(kDiscriminatorParams) + ", map " +
         std::to_string(map.h) + "x" + std::to_string(map.w) + ", output range [" + fmt("%.4f", lo) + ", " +
         fmt("%.4f", hi) + "]");
  return o;
}

// ---- 5: determinism and resume ----

constexpr long long kDeterminismSteps = 100, kResumeAt = 50;

std::string slurp(const fs::path &p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

Outcome determinism() {
  Outcome o;
  const fs::path data = phantom_dir(20, 11);
  RunConfig c = phantom_run_config();
  c.generator.base_channels = 16;
  c.discriminator.base_channels = 16;
  c.train.batch_size = 1;
  c.train.epochs = 5; // 20 steps per epoch
  c.train.lr_decay_start = 2;
  c.set_seed(17);
  const auto loader = make_loader(data / "ct", data / "mr", c.preprocess, 64);

  std::vector<fs::path> logs;
  for (const char *run : {"c5_run_a", "c5_run_b"}) {
    TrainState<float> st(c);
    const auto res = fit(st, loader, fresh(run));
    o.require(res.total_steps == kDeterminismSteps, "schedule length");
    logs.push_back(res.loss_log);
  }
  o.require(slurp(logs[0]) == slurp(logs[1]), "two runs give identical loss logs");

  const fs::path split = fresh("c5_resume");
  {
    RunConfig half = c;
    half.train.max_steps = kResumeAt;
    TrainState<float> st(half);
    fit(st, loader, split);
  }
  auto st = load_checkpoint<float>(split / "final.ckpt");
  o.require(st->step == kResumeAt, "checkpoint at step 50");
  st->config.train.max_steps = 0;
  const auto res = fit(*st, loader, split);
  o.require(res.log.size() == static_cast<std::size_t>(kDeterminismSteps - kResumeAt), "resumed run covers 51-100");

  const auto full = read_loss_log(logs[0]), resumed = read_loss_log(split / "loss_log.csv");
  std::size_t equal = 0;
  for (std::size_t i = kResumeAt; i < full.size() && i < resumed.size(); ++i)
    equal += full[i].first == resumed[i].first && full[i].second == resumed[i].second;
  o.require(equal == static_cast<std::size_t>(kDeterminismSteps - kResumeAt), "steps 51-100 identical after resume");
  o.require(slurp(split / "final.ckpt") == slurp(fs::path(logs[0]).parent_path() / "final.ckpt"),
            "final checkpoints identical");
  o.note("2 x 100 steps identical; resume at 50 reproduces " + std::to_string(equal) + "/50 steps bit-for-bit");
  return o;
}

// ---- 6: phantom convergence ----

constexpr std::size_t kConvergencePhantoms = 200;
constexpr long long kConvergenceSteps = 2000;
constexpr double kCycleRatio = 0.5, kHeldOutSsim = 0.5;

struct ConvergenceRun {
  double g_first = 0, g_last = 0, cyc_first = 0, cyc_last = 0, heldout_ssim = 0;
  fs::path checkpoint;
};

ConvergenceRun convergence_run(double lambda_ssim) {
  const fs::path data = phantom_dir(kConvergencePhantoms, 0);
  RunConfig c = phantom_run_config();
  c.generator.base_channels = 8;
  c.generator.n_resblocks = 3;
  c.discriminator.base_channels = 8;
  c.train.epochs = static_cast<int>((kConvergenceSteps + kConvergencePhantoms - 1) / kConvergencePhantoms);
  c.train.max_steps = kConvergenceSteps;
  c.train.lr_decay_start = c.train.epochs / 2;
  c.train.weights.lambda_ssim = lambda_ssim;
  const auto loader = make_loader(data / "ct", data / "mr", c.preprocess, 64);
  TrainState<float> st(c);
  const auto res = fit(st, loader, fresh("c6_lambda_ssim_" + fmt("%g", lambda_ssim)));

  ConvergenceRun r;
  const std::size_t n = res.log.size(), k = n / 10;
  auto mean = [&](std::size_t a, std::size_t b, double LossBreakdown::*f) {
    double s = 0;
    for (std::size_t i = a; i < b; ++i) s += res.log[i].*f;
    return s / static_cast<double>(b - a);
  };
  r.g_first = mean(0, k, &LossBreakdown::generator_total);
  r.g_last = mean(n - k, n, &LossBreakdown::generator_total);
  r.cyc_first = mean(0, k, &LossBreakdown::cycle);
  r.cyc_last = mean(n - k, n, &LossBreakdown::cycle);

  // Held-out phantoms follow the training indices, in both directions.
  PhantomSpec spec;
  spec.image_size = 64;
  PreprocessConfig pc = c.preprocess;
  pc.augment = false;
  double s = 0;
  int count = 0;
  for (std::size_t i = kConvergencePhantoms; i < kConvergencePhantoms + 20; ++i) {
    const auto p = generate_phantom(spec, i);
    Rng unused(0);
    for (const auto &[img, target] : {std::pair{p.ct_image, Modality::MR}, std::pair{p.mr_image, Modality::CT}}) {
      const Image x = preprocess_slice(img, pc, unused).pixels;
      s += ssim_index(x, translate_image(st.bundle.generator_to(target), x));
      ++count;
    }
  }
  r.heldout_ssim = s / count;
  r.checkpoint = res.final_checkpoint;
  return r;
}

Outcome convergence() {
  Outcome o;
  for (double lambda_ssim : {1.0, 0.0}) {
    const auto r = convergence_run(lambda_ssim);
    const std::string tag = "lambda_ssim=" + fmt("%g", lambda_ssim);
    o.require(r.g_last < r.g_first, tag + " (a) generator_total decreases");
    o.require(r.cyc_last < kCycleRatio * r.cyc_first, tag + " (b) cycle below 50% of its start");
    if (lambda_ssim > 0) o.require(r.heldout_ssim >= kHeldOutSsim, tag + " (c) held-out ssim >= 0.5");
    o.note(tag + ": G " + fmt("%.3f", r.g_first) + " -> " + fmt("%.3f", r.g_last) + ", cycle " + fmt("%.3f", r.cyc_first) +
           " -> " + fmt("%.3f", r.cyc_last) + ", held-out ssim " + fmt("%.4f", r.heldout_ssim));
  }
  return o;
}

// ---- 7: plain cycle-consistent objective at lambda_ssim = 0 ----

constexpr int kEquivalenceSteps = 50;

// train_step with the SSIM term removed from the objective altogether.
template <typename T>
LossBreakdown reference_step(TrainState<T> &st, const Tensor<T> &ct_batch, const Tensor<T> &mr_batch, double lr) {
  auto &b = st.bundle;
  const auto &w = st.config.train.weights;
  LossBreakdown out;
  Tensor<T> fake_mr_t, fake_ct_t;
  b.gen_ct.params().zero_grad();
  b.gen_mr.params().zero_grad();
  {
    FrozenParams<T> fa(b.dis_ct.params()), fb(b.dis_mr.params());
    const Var<T> ct(ct_batch), mr(mr_batch);
    const Var<T> fake_mr = b.gen_mr.forward(ct), rec_ct = b.gen_ct.forward(fake_mr);
    const Var<T> fake_ct = b.gen_ct.forward(mr), rec_mr = b.gen_mr.forward(fake_ct);
    const Var<T> gan = gan_loss(b.dis_mr.forward(fake_mr), b.dis_ct.forward(fake_ct));
    const Var<T> cyc = cycle_loss(mr, rec_mr, ct, rec_ct);
    const Var<T> idl = identity_loss(b.gen_ct.forward(ct), ct, b.gen_mr.forward(mr), mr);
    backward(weighted_sum<T>({gan, cyc, idl}, {T(1), static_cast<T>(w.lambda_cyc), static_cast<T>(w.lambda_id)}));
    out.gan = gan.value().item();
    out.cycle = cyc.value().item();
    out.identity = idl.value().item();
    out.generator_total = out.gan + w.lambda_cyc * out.cycle + w.lambda_id * out.identity;
    fake_mr_t = fake_mr.value();
    fake_ct_t = fake_ct.value();
  }
  st.opt_g.step(lr);
  auto dis_step = [&](Discriminator<T> &d, Adam<T> &opt, ReplayPool<T> &pool, const Tensor<T> &real,
                      const Tensor<T> &fake) {
    const Tensor<T> replayed = pool.query(fake, st.rng);
    d.params().zero_grad();
    const Var<T> loss = discriminator_loss(d.forward(Var<T>(real)), d.forward(Var<T>(replayed)));
    backward(loss);
    opt.step(lr);
    return loss.value().item();
  };
  out.dis_ct = dis_step(b.dis_ct, st.opt_dis_ct, st.pool_ct, ct_batch, fake_ct_t);
  out.dis_mr = dis_step(b.dis_mr, st.opt_dis_mr, st.pool_mr, mr_batch, fake_mr_t);
  ++st.step;
  return out;
}

Outcome plain_equivalence() {
  Outcome o;
  const fs::path data = phantom_dir(20, 11);
  RunConfig c = phantom_run_config();
  c.generator.base_channels = 8;
  c.generator.n_resblocks = 2;
  c.discriminator.base_channels = 8;
  c.train.epochs = 3;
  c.train.lr_decay_start = 1;
  c.train.weights.lambda_ssim = 0;
  c.set_seed(23);
  const auto loader = make_loader(data / "ct", data / "mr", c.preprocess, 64);
  TrainState<float> full(c), plain(c);
  const long long per_epoch = steps_per_epoch(loader, c.train.batch_size);
  int equal = 0;
  for (int s = 0; s < kEquivalenceSteps; ++s) {
    const auto [ct, mr] = make_batch<float>(loader, s / per_epoch, s % per_epoch, 1, 1);
    const double lr = scheduled_lr(c.train, s, per_epoch);
    LossBreakdown a = train_step(full, ct, mr, lr);
    const LossBreakdown b = reference_step(plain, ct, mr, lr);
    a.ssim = 0; // logged only; the reference has no such term
    equal += a == b;
  }
  o.require(equal == kEquivalenceSteps, "per-step LossBreakdown bit-identical");
  std::vector<Tensor<float>> pa, pb;
  full.bundle.for_each_param([&](const std::string &, Var<float> &v) { pa.push_back(v.value()); });
  plain.bundle.for_each_param([&](const std::string &, Var<float> &v) { pb.push_back(v.value()); });
  o.require(pa == pb, "final parameters bit-identical");
  o.note(std::to_string(equal) + "/" + std::to_string(kEquivalenceSteps) + " steps bit-identical, parameters " +
         (pa == pb ? "identical" : "differ"));
  return o;
}

// ---- 8: report fidelity ----

constexpr double kReaggregationTol = 1e-9;

std::vector<std::string> split(const std::string &s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep)) out.push_back(cur);
  return out;
}

Outcome report_fidelity() {
  Outcome o;
  const fs::path train = phantom_dir(20, 11), test = phantom_dir(6, 99);
  std::vector<std::pair<std::string, fs::path>> models;
  for (double lambda_ssim : {1.0, 0.0}) {
    RunConfig c = phantom_run_config();
    c.generator.base_channels = 8;
    c.generator.n_resblocks = 2;
    c.discriminator.base_channels = 8;
    c.train.epochs = 1;
    c.train.weights.lambda_ssim = lambda_ssim;
    TrainState<float> st(c);
    const auto res = fit(st, make_loader(train / "ct", train / "mr", c.preprocess, 64),
                         fresh("c8_train_" + fmt("%g", lambda_ssim)));
    models.emplace_back(lambda_ssim > 0 ? "ssim" : "cyclegan", res.final_checkpoint);
  }
  const fs::path out = fresh("c8_report");
  std::string cmd = std::string("\"") + CTMR_CLI + "\" evaluate";
  for (const auto &[name, path] : models) cmd += " --model " + name + "=\"" + path.string() + "\"";
  cmd += " --ct \"" + (test / "ct").string() + "\" --mr \"" + (test / "mr").string() + "\" --out \"" + out.string() +
         "\" > \"" + (out / "stdout.txt").string() + "\" 2>&1";
  o.require(std::system(cmd.c_str()) == 0, "evaluate exits 0");

  std::ifstream rep(out / "report.csv"), per(out / "per_slice.csv");
  std::string line;
  std::getline(rep, line);
  o.require(line == "model,direction,fid,ssim,mi,pixacc,n_slices", "report.csv header");
  std::map<std::pair<std::string, std::string>, std::vector<double>> report, sums;
  while (std::getline(rep, line)) {
    const auto c = split(line, ',');
    if (c.size() != 7) {
      o.require(false, "report.csv row width");
      continue;
    }
    auto &r = report[{c[0], c[1]}];
    for (std::size_t k = 2; k < 7; ++k) r.push_back(std::stod(c[k]));
  }
  std::set<std::string> names, dirs;
  for (const auto &[key, v] : report) names.insert(key.first), dirs.insert(key.second);
  o.require(report.size() == 4 && names == std::set<std::string>{"ssim", "cyclegan"} &&
                dirs == std::set<std::string>{"CT->MR", "MR->CT"},
            "2 models x 2 directions");

  std::getline(per, line);
  o.require(line == "model,direction,slice_id,fid,ssim,mi,pixacc", "per_slice.csv header");
  while (std::getline(per, line)) {
    const auto c = split(line, ',');
    if (c.size() != 7) {
      o.require(false, "per_slice.csv row width");
      continue;
    }
    auto &s = sums[{c[0], c[1]}];
    s.resize(5);
    for (std::size_t k = 0; k < 4; ++k) s[k] += std::stod(c[3 + k]);
    s[4] += 1;
  }
  double worst = 0;
  std::size_t means = 0;
  for (const auto &[key, r] : report) {
    const auto it = sums.find(key);
    if (it == sums.end() || r.size() != 5) {
      o.require(false, "per-slice rows for " + key.first + " " + key.second);
      continue;
    }
    o.require(it->second[4] == r[4], "slice count for " + key.first + " " + key.second);
    for (std::size_t k = 0; k < 4; ++k) {
      worst = std::max(worst, std::abs(it->second[k] / it->second[4] - r[k]));
      ++means;
    }
  }
  o.require(worst < kReaggregationTol, "re-aggregated means");

  const std::string table = slurp(out / "report.txt");
  const auto rows = split(table, '\n');
  bool schema = rows.size() == 5 && rows[0].find("CT->MR") != std::string::npos &&
                rows[0].find("MR->CT") != std::string::npos;
  for (const char *h : {"FID", "SSIM", "MI", "pixacc"}) {
    std::size_t n = 0;
    for (std::size_t p = rows.size() > 1 ? rows[1].find(h) : std::string::npos; p != std::string::npos;
         p = rows[1].find(h, p + 1))
      ++n;
    schema = schema && n == 2;
  }
  o.require(schema, "report.txt table layout");
  o.note(std::to_string(means) + " means re-aggregated, max abs err " + fmt("%.1e", worst) + " (< 1e-9)");
  return o;
}

struct Criterion {
  int id;
  const char *title;
  double budget_s;
  Outcome (*run)();
};

} // namespace

int main(int argc, char **argv) {
  std::set<int> only;
  g_work = fs::temp_directory_path() / "ctmr_acceptance";
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--work" && i + 1 < argc) g_work = argv[++i];
    else only.insert(std::stoi(a));
  }
  fs::create_directories(g_work);

  const std::vector<Criterion> all{
      {1, "loss-formula oracles", 10, loss_oracles},
      {2, "gradient checks", 60, gradient_checks},
      {3, "metric oracles", 10, metric_oracles},
      {4, "architecture contracts", 30, architecture},
      {5, "determinism and resume", 600, determinism},
      {6, "phantom convergence", 1800, convergence},
      {7, "plain cycle-consistent equivalence", 600, plain_equivalence},
      {8, "report fidelity", 600, report_fidelity},
  };
  int failed = 0;
  for (const auto &c : all) {
    if (!only.empty() && !only.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception &e) {
      o.require(false, std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    o.require(secs <= c.budget_s, "runtime budget");
    failed += !o.pass;
    std::printf("criterion %d: %s  %s | %s | %.1f s (budget %.0f s)\n", c.id, o.pass ? "PASS" : "FAIL", c.title,
                o.detail.c_str(), secs, c.budget_s);
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
