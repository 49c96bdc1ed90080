#include <gtest/gtest.h>

#include "ctmr/trainer.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace ctmr;
using namespace ctmr::testing;

namespace {

Var<double> leaf(Shape s, std::uint64_t seed, bool grad = false) { return Var<double>(random_tensor(s, seed), grad); }

void expect_smooth_match(const GradCheckResult &r, const std::string &what) {
  EXPECT_GE(r.checked, 10u) << what;
  EXPECT_LE(r.skipped, r.checked / 4) << what;
  EXPECT_LT(r.max_rel_err, 1e-3) << what;
}

} // namespace

TEST(LossOracle, GanLossMatchesElementwiseSum) {
  for (Shape s : {Shape{4, 1, 30, 30}, Shape{4, 1, 64, 64}}) {
    const auto a = leaf(s, 1), b = leaf(s, 2);
    const double expected = lsgan_oracle(a.value(), 1) + lsgan_oracle(b.value(), 1);
    EXPECT_LT(rel_err(gan_loss(a, b).value().item(), expected), 1e-12);
  }
}

TEST(LossOracle, DiscriminatorLossMatchesElementwiseSum) {
  for (Shape s : {Shape{4, 1, 30, 30}, Shape{4, 1, 64, 64}}) {
    const auto real = leaf(s, 3), fake = leaf(s, 4);
    const double expected = lsgan_oracle(real.value(), 1) + lsgan_oracle(fake.value(), 0);
    EXPECT_LT(rel_err(discriminator_loss(real, fake).value().item(), expected), 1e-12);
  }
}

TEST(LossOracle, CycleAndIdentityMatchElementwiseSum) {
  for (Shape s : {Shape{4, 1, 30, 30}, Shape{4, 1, 64, 64}}) {
    const auto xm = leaf(s, 5), rm = leaf(s, 6), xc = leaf(s, 7), rc = leaf(s, 8);
    const double expected = l1_oracle(rm.value(), xm.value()) + l1_oracle(rc.value(), xc.value());
    EXPECT_LT(rel_err(cycle_loss(xm, rm, xc, rc).value().item(), expected), 1e-12);
    EXPECT_LT(rel_err(identity_loss(rc, xc, rm, xm).value().item(), expected), 1e-12);
  }
}

TEST(LossOracle, SsimMatchesDoubleLoop) {
  const SsimConstants k;
  for (Shape s : {Shape{4, 1, 30, 30}, Shape{4, 1, 64, 64}}) {
    const auto x = leaf(s, 9), y = leaf(s, 10);
    EXPECT_LT(rel_err(ssim_loss(x, y, k).value().item(), ssim_global_oracle(x.value(), y.value(), k)), 1e-10);
    EXPECT_LT(rel_err(ssim_loss(x, y, k, SsimMode::Windowed).value().item(),
                      ssim_windowed_oracle(x.value(), y.value(), k)),
              1e-10);
    EXPECT_LT(rel_err(ssim_literal_loss(x, y, k).value().item(), ssim_literal_oracle(x.value(), y.value(), k)),
              1e-10);
  }
}

TEST(LossValues, ClosedForms) {
  const Shape s{2, 1, 16, 16};
  const Var<double> ones(Tensor<double>(s, 1.0)), zeros(Tensor<double>(s, 0.0)), half(Tensor<double>(s, 0.5));
  EXPECT_EQ(gan_loss(ones, ones).value().item(), 0.0);
  EXPECT_EQ(discriminator_loss(ones, zeros).value().item(), 0.0);
  EXPECT_DOUBLE_EQ(gan_loss(half, zeros).value().item(), 0.25 + 1.0);
  EXPECT_DOUBLE_EQ(discriminator_loss(half, half).value().item(), 0.25 + 0.25);
  EXPECT_DOUBLE_EQ(cycle_loss(ones, half, zeros, half).value().item(), 1.0);

  const auto x = leaf(s, 11);
  EXPECT_NEAR(ssim_loss(x, x).value().item(), 0.0, 1e-15);
  EXPECT_NEAR(ssim_loss(x, x, {}, SsimMode::Windowed).value().item(), 0.0, 1e-15);
  const auto y = leaf(s, 12);
  EXPECT_DOUBLE_EQ(ssim_loss(x, y).value().item(), ssim_loss(y, x).value().item());
  EXPECT_THROW(ssim_loss(x, y, {}, SsimMode::Literal), ValidationError);
  EXPECT_THROW(ssim_loss(x, leaf(Shape{2, 1, 16, 9}, 1)), ValidationError);
  EXPECT_THROW(ssim_loss(leaf(Shape{1, 1, 8, 8}, 1), leaf(Shape{1, 1, 8, 8}, 2), {}, SsimMode::Windowed),
               ValidationError);
}

TEST(LossValues, WeightsAndModesParse) {
  EXPECT_EQ(parse_ssim_mode("windowed"), SsimMode::Windowed);
  EXPECT_EQ(to_string(parse_ssim_mode("literal")), "literal");
  EXPECT_THROW(parse_ssim_mode("local"), ValidationError);
  LossWeights w;
  w.lambda_id = -1;
  EXPECT_THROW(w.validate(), ValidationError);
  EXPECT_THROW((SsimConstants{0, 0.1}).validate(), ValidationError);
}

TEST(LossValues, GeneratorTotalIsLinearInTheWeights) {
  LossBreakdown b;
  b.gan = 0.7;
  b.cycle = 0.3;
  b.identity = 0.2;
  b.ssim = 0.4;
  EXPECT_DOUBLE_EQ(generator_total_loss(b, {10, 5, 1}), 0.7 + 3.0 + 1.0 + 0.4);
  EXPECT_DOUBLE_EQ(generator_total_loss(b, {10, 5, 0}), 0.7 + 3.0 + 1.0);
  EXPECT_DOUBLE_EQ(generator_total_loss(b, {0, 0, 0}), 0.7);
}

TEST(LossGradient, ElementwiseTerms) {
  const Shape s{2, 1, 6, 6};
  const auto a = leaf(s, 20, true), b = leaf(s, 21, true), c = leaf(s, 22, true), d = leaf(s, 23, true);
  EXPECT_LT(grad_check([&] { return gan_loss(a, b); }, {a, b}, 12, 1).max_rel_err, 1e-6);
  EXPECT_LT(grad_check([&] { return discriminator_loss(a, b); }, {a, b}, 12, 2).max_rel_err, 1e-6);
  EXPECT_LT(grad_check([&] { return cycle_loss(a, b, c, d); }, {a, b, c, d}, 6, 3).max_rel_err, 1e-6);
  EXPECT_LT(grad_check([&] { return identity_loss(a, b, c, d); }, {a, b, c, d}, 6, 4).max_rel_err, 1e-6);
}

TEST(LossGradient, SsimVariants) {
  const Shape s{2, 1, 16, 16};
  const auto x = leaf(s, 30, true), y = leaf(s, 31, true);
  for (SsimMode m : {SsimMode::Global, SsimMode::Windowed}) {
    // Border pixels of the windowed variant carry near-zero gradients; the floor
    // keeps their roundoff from dominating.
    const auto r = grad_check([&] { return ssim_loss(x, y, {}, m); }, {x, y}, 12, 5, 1e-5, 1e-6);
    EXPECT_GE(r.checked, 10u);
    EXPECT_LT(r.max_rel_err, 1e-6) << to_string(m);
  }
  const auto r = grad_check([&] { return ssim_literal_loss(x, y); }, {x, y}, 12, 6, 1e-5);
  EXPECT_LT(r.max_rel_err, 1e-6);
}

// Each term, through 16x16 toy networks, with respect to generator weights.
TEST(LossGradient, TermsThroughToyNetworks) {
  const RunConfig cfg = toy_config();
  ModelBundle<double> b(cfg.generator, cfg.discriminator, 40);
  const Var<double> ct(random_tensor(Shape{1, 1, 16, 16}, 41)), mr(random_tensor(Shape{1, 1, 16, 16}, 42));
  const auto leaves = gen_leaves(b);

  const std::vector<std::pair<std::string, std::function<Var<double>()>>> terms{
      {"gan", [&] { return gan_loss(b.dis_mr.forward(b.gen_mr.forward(ct)), b.dis_ct.forward(b.gen_ct.forward(mr))); }},
      {"cycle",
       [&] { return cycle_loss(mr, b.gen_mr.forward(b.gen_ct.forward(mr)), ct, b.gen_ct.forward(b.gen_mr.forward(ct))); }},
      {"identity", [&] { return identity_loss(b.gen_ct.forward(ct), ct, b.gen_mr.forward(mr), mr); }},
      {"ssim", [&] {
         return ssim_objective(ct, b.gen_mr.forward(ct), mr, b.gen_ct.forward(mr), SsimMode::Global, SsimConstants{});
       }}};
  for (const auto &[name, f] : terms) {
    expect_smooth_match(grad_check(f, leaves, 1, 43, kStep, kFloor, true), name);
  }

  std::vector<Var<double>> dl;
  for (auto &p : b.dis_mr.params().items()) dl.push_back(p.var);
  const Var<double> fake(b.gen_mr.infer(ct.value()));
  expect_smooth_match(grad_check([&] { return discriminator_loss(b.dis_mr.forward(mr), b.dis_mr.forward(fake)); },
                                 dl, 3, 44, kStep, kFloor, true),
                      "discriminator");
}

TEST(LossGradient, CompositeGeneratorObjective) {
  RunConfig cfg = toy_config();
  for (double lambda_ssim : {0.0, 1.0}) {
    cfg.train.weights.lambda_ssim = lambda_ssim;
    ModelBundle<double> b(cfg.generator, cfg.discriminator, 50);
    const Tensor<double> ct = random_tensor(Shape{1, 1, 16, 16}, 51), mr = random_tensor(Shape{1, 1, 16, 16}, 52);
    FrozenParams<double> fa(b.dis_ct.params()), fb(b.dis_mr.params());
    const auto obj = generator_objective(b, ct, mr, cfg.train);
    EXPECT_LT(rel_err(obj.total.value().item(), obj.parts.generator_total), 1e-12);
    expect_smooth_match(grad_check([&] { return generator_objective(b, ct, mr, cfg.train).total; }, gen_leaves(b), 1,
                                   53, kStep, kFloor, true),
                        "lambda_ssim=" + std::to_string(lambda_ssim));
  }
}
