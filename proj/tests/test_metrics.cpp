#include <gtest/gtest.h>

#include "ctmr/metrics.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace ctmr;
using namespace ctmr::testing;

namespace {

Image random_image(std::size_t h, std::size_t w, std::uint64_t seed, double lo = -1, double hi = 1) {
  Rng rng(seed);
  Image img(h, w);
  for (auto &v : img.pixels) v = rng.uniform(lo, hi);
  return img;
}

ModelBundle<double> identity_bundle() {
  GeneratorConfig g;
  g.base_channels = 8;
  g.n_resblocks = 1;
  ModelBundle<double> b(g, DiscriminatorConfig{1, 8, 1}, 0);
  b.gen_ct.set_identity(true);
  b.gen_mr.set_identity(true);
  return b;
}

std::vector<EvalSlice> slices(const std::string &id, std::size_t n, std::uint64_t seed) {
  std::vector<EvalSlice> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back({id, i, random_image(16, 16, seed + i)});
  return out;
}

} // namespace

TEST(SsimIndex, SelfIsOne) {
  const Image x = random_image(32, 32, 1);
  EXPECT_NEAR(ssim_index(x, x), 1.0, 1e-15);
  const Image y = random_image(32, 32, 2);
  const double s = ssim_index(x, y);
  EXPECT_LT(s, 1.0);
  EXPECT_DOUBLE_EQ(s, ssim_index(y, x));
  EXPECT_THROW(ssim_index(x, random_image(32, 16, 3)), ValidationError);
}

TEST(MutualInformation, TwoLevelSelfPairIsLn2) {
  Image x(8, 8);
  for (std::size_t i = 0; i < x.size(); ++i) x.pixels[i] = i % 2 ? 0.5 : -0.5;
  EXPECT_NEAR(mutual_information(x, x, 2), std::log(2.0), 1e-9);
}

TEST(MutualInformation, MatchesEntropyOracle) {
  for (std::size_t bins : {2u, 8u, 64u}) {
    const Image a = random_image(64, 64, 10);
    Image b = random_image(64, 64, 11);
    for (std::size_t i = 0; i < b.size(); ++i) b.pixels[i] = 0.6 * a.pixels[i] + 0.4 * b.pixels[i];
    EXPECT_NEAR(mutual_information(a, b, bins), mi_entropy_oracle(a, b, bins), 1e-12) << bins;
  }
}

TEST(MutualInformation, BoundedByTheSmallerEntropy) {
  const Image a = random_image(48, 48, 20);
  Image b = random_image(48, 48, 21, -0.2, 0.2);
  for (std::size_t i = 0; i < b.size(); ++i) b.pixels[i] += 0.5 * a.pixels[i];
  const double mi = mutual_information(a, b, 16);
  EXPECT_GE(mi, 0.0);
  EXPECT_LE(mi, std::min(entropy_of(a, 16), entropy_of(b, 16)) + 1e-12);
  EXPECT_EQ(mutual_information(a, Image(48, 48, 0.3), 16), 0.0);
}

TEST(MutualInformation, ClampsOutOfRangeValuesToEndBins) {
  EXPECT_EQ(mi_bin(-1.0, 64), 0u);
  EXPECT_EQ(mi_bin(-7.0, 64), 0u);
  EXPECT_EQ(mi_bin(1.0, 64), 63u);
  EXPECT_EQ(mi_bin(0.0, 64), 32u);
  EXPECT_THROW(mutual_information(Image(4, 4), Image(4, 4), 1), ValidationError);
}

TEST(Pixacc, ScaleInvariantCosine) {
  const Image a = random_image(32, 32, 30), b = random_image(32, 32, 31);
  const double base = pixacc(a, b);
  for (double c : {0.5, 3.0, 1e3}) {
    Image bs = b;
    for (auto &v : bs.pixels) v *= c;
    EXPECT_NEAR(pixacc(a, bs), base, 4e-16);
  }
  Image neg = a;
  for (auto &v : neg.pixels) v = -v;
  EXPECT_NEAR(pixacc(a, a), 1.0, 1e-15);
  EXPECT_NEAR(pixacc(a, neg), -1.0, 1e-15);
  EXPECT_THROW(pixacc(a, Image(32, 32, 0.0)), ValidationError);
}

TEST(Fid, MatchesEmbedNormalizeDotOracle) {
  const EmbeddingExtractor ex(ExtractorKind::FixedRandomProjection, 64, 5);
  std::vector<Image> gen, real;
  for (int i = 0; i < 5; ++i) gen.push_back(random_image(16, 16, 40 + i));
  for (int i = 0; i < 7; ++i) real.push_back(random_image(16, 16, 60 + i));
  EXPECT_NEAR(fid_similarity(gen, real, ex), fid_oracle(gen, real, ex), 1e-10);
  EXPECT_NEAR(fid_similarity({gen[0]}, {gen[0]}, ex), 1.0, 1e-12);
}

TEST(Fid, IndependentOfSetOrder) {
  const EmbeddingExtractor ex(ExtractorKind::FixedRandomProjection, 32);
  std::vector<Image> gen, real;
  for (int i = 0; i < 4; ++i) gen.push_back(random_image(16, 16, 70 + i));
  for (int i = 0; i < 6; ++i) real.push_back(random_image(16, 16, 80 + i));
  const double base = fid_similarity(gen, real, ex);
  std::reverse(gen.begin(), gen.end());
  std::rotate(real.begin(), real.begin() + 2, real.end());
  EXPECT_NEAR(fid_similarity(gen, real, ex), base, 1e-14);
}

TEST(Fid, SubsamplesRealsAboveThePairBudget) {
  FidOptions opt;
  opt.max_pairs = 20;
  EXPECT_EQ(fid_real_subset(4, 5, opt).size(), 5u);
  const auto sub = fid_real_subset(4, 30, opt);
  EXPECT_EQ(sub.size(), 5u);
  EXPECT_TRUE(std::is_sorted(sub.begin(), sub.end()));
  EXPECT_EQ(sub, fid_real_subset(4, 30, opt));
  EXPECT_EQ(fid_real_subset(100, 30, opt).size(), 1u);
}

TEST(Extractor, MatrixIsSeededAndScaled) {
  const EmbeddingExtractor a(ExtractorKind::FixedRandomProjection, 128, 1), b(ExtractorKind::FixedRandomProjection, 128, 1);
  const auto &m = a.matrix(32, 32);
  EXPECT_EQ(m, b.matrix(32, 32));
  double q = 0;
  for (float v : m) q += double(v) * v;
  EXPECT_NEAR(q / m.size(), 1.0 / 128, 0.02 / 128);
  EXPECT_THROW(EmbeddingExtractor(ExtractorKind::PretrainedDensenet121), ValidationError);
  EXPECT_THROW(parse_extractor_kind("inception"), ValidationError);
}

TEST(Evaluate, IdentityModelScoresPerfectReconstruction) {
  auto b = identity_bundle();
  const auto ct = slices("ct_a", 3, 100), mr = slices("mr_a", 4, 200);
  const EmbeddingExtractor ex(ExtractorKind::FixedRandomProjection, 32);
  const auto res = evaluate_model(b, ct, mr, ex);
  for (const auto *r : {&res.ct_to_mr, &res.mr_to_ct}) {
    EXPECT_DOUBLE_EQ(r->ssim, 1.0);
    EXPECT_NEAR(r->pixacc, 1.0, 1e-15);
    r->validate();
  }
  EXPECT_EQ(res.ct_to_mr.n_slices, 3u);
  EXPECT_EQ(res.mr_to_ct.n_slices, 4u);
  double mi = 0;
  for (const auto &s : ct) mi += entropy_of(s.pixels, 64);
  EXPECT_NEAR(res.ct_to_mr.mi, mi / 3, 1e-12);
}

TEST(Evaluate, ReportMeansEqualPerSliceMeans) {
  GeneratorConfig g;
  g.base_channels = 8;
  g.n_resblocks = 1;
  ModelBundle<double> b(g, DiscriminatorConfig{1, 8, 1}, 4);
  const auto ct = slices("ct_b", 5, 300), mr = slices("mr_b", 3, 400);
  const EmbeddingExtractor ex(ExtractorKind::FixedRandomProjection, 32);
  const auto res = evaluate_model(b, ct, mr, ex);
  for (const auto *r : {&res.ct_to_mr, &res.mr_to_ct}) {
    double f = 0, s = 0, m = 0, p = 0;
    std::size_t n = 0;
    for (const auto &row : res.per_slice) {
      if (row.direction != r->direction) continue;
      f += row.fid, s += row.ssim, m += row.mi, p += row.pixacc, ++n;
    }
    ASSERT_EQ(n, r->n_slices);
    EXPECT_NEAR(f / n, r->fid, 1e-12);
    EXPECT_NEAR(s / n, r->ssim, 1e-12);
    EXPECT_NEAR(m / n, r->mi, 1e-12);
    EXPECT_NEAR(p / n, r->pixacc, 1e-12);
  }
}

TEST(Evaluate, RejectsEmptySets) {
  auto b = identity_bundle();
  const EmbeddingExtractor ex(ExtractorKind::FixedRandomProjection, 8);
  EXPECT_THROW(evaluate_model(b, {}, slices("mr", 1, 1), ex), ValidationError);
  EXPECT_THROW(reduce_direction(Direction::CtToMr, {}), ValidationError);
}
