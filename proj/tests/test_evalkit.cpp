#include <gtest/gtest.h>

#include <cmath>

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include "pairgen/evalkit.hpp"
#include "scene.hpp"

using namespace pairgen;

namespace {

Eigen::MatrixXd to_eigen(const torch::Tensor& t) {
  auto c = t.to(torch::kDouble).contiguous();
  Eigen::MatrixXd m(c.size(0), c.size(1));
  for (int64_t i = 0; i < c.size(0); ++i)
    for (int64_t j = 0; j < c.size(1); ++j) m(i, j) = c[i][j].item<double>();
  return m;
}

torch::Tensor random_spd(int64_t d, double scale) {
  auto a = torch::randn({d, d}, torch::kDouble) * scale;
  return a.matmul(a.t()) + 0.1 * torch::eye(d, torch::kDouble);
}

// Fréchet distance by a general matrix square root of S1*S2.
double eigen_frechet(const torch::Tensor& m1, const torch::Tensor& s1, const torch::Tensor& m2,
                     const torch::Tensor& s2) {
  Eigen::MatrixXd a = to_eigen(s1), b = to_eigen(s2);
  Eigen::MatrixXd prod = a * b;
  Eigen::MatrixXd root = prod.sqrt();
  const double mean_term = (m1 - m2).pow(2).sum().item<double>();
  return mean_term + a.trace() + b.trace() - 2.0 * root.trace();
}

torch::Tensor noisy(const torch::Tensor& x, double sigma, int seed) {
  auto gen = torch::make_generator<at::CPUGeneratorImpl>(seed);
  return (x + sigma * torch::randn(x.sizes(), gen)).clamp(-1.0, 1.0);
}

}  // namespace

TEST(Frechet, MatchesMatrixSqrtOracle) {
  torch::manual_seed(21);
  for (int trial = 0; trial < 10; ++trial) {
    const int64_t d = 6 + trial;
    auto m1 = torch::randn({d}, torch::kDouble), m2 = torch::randn({d}, torch::kDouble);
    auto s1 = random_spd(d, 1.0), s2 = random_spd(d, 0.5);
    const double got = frechet_distance(make_gaussian(m1, s1), make_gaussian(m2, s2));
    EXPECT_NEAR(got, eigen_frechet(m1, s1, m2, s2), 1e-4);
  }
}

TEST(Frechet, DiagonalClosedForm) {
  auto v1 = torch::tensor({1.0, 4.0, 9.0}, torch::kDouble);
  auto v2 = torch::tensor({4.0, 1.0, 9.0}, torch::kDouble);
  auto m1 = torch::tensor({0.0, 1.0, 2.0}, torch::kDouble);
  auto m2 = torch::tensor({1.0, 1.0, 0.0}, torch::kDouble);
  // |dm|^2 = 5, sum (sqrt v1 - sqrt v2)^2 = 1 + 1 + 0.
  const double got =
      frechet_distance(make_gaussian(m1, torch::diag(v1)), make_gaussian(m2, torch::diag(v2)));
  EXPECT_NEAR(got, 7.0, 1e-9);
}

TEST(Frechet, SelfIsZero) {
  torch::manual_seed(22);
  auto g = make_gaussian(torch::randn({12}, torch::kDouble), random_spd(12, 1.0));
  EXPECT_NEAR(frechet_distance(g, g), 0.0, 1e-8);
}

TEST(Gaussian, FitIsUnbiasedAndFlagsSmallSamples) {
  torch::manual_seed(23);
  auto x = torch::randn({50, 4});
  auto fit = fit_gaussian(x);
  auto xd = x.to(torch::kDouble);
  auto centred = xd - xd.mean(0);
  auto cov = centred.t().matmul(centred) / 49.0;
  EXPECT_TRUE(torch::allclose(fit.covariance, cov, 1e-10, 1e-12));
  EXPECT_FALSE(fit.regularized);
  EXPECT_EQ(fit.count, 50);

  auto small = fit_gaussian(torch::randn({5, 10}));
  EXPECT_TRUE(small.regularized);
  EXPECT_GT(torch::linalg_eigvalsh(small.covariance, "L").min().item<double>(), 0.0);
}

TEST(Sifid, IdenticalIsZeroAndSymmetric) {
  auto x = scenes::disc_scene({48, 80}).image;
  auto y = noisy(x, 0.3, 1);
  for (int layer = 1; layer <= 4; ++layer) {
    EXPECT_NEAR(sifid(x, x, layer), 0.0, 1e-6) << layer;
    const double ab = sifid(x, y, layer), ba = sifid(y, x, layer);
    EXPECT_GT(ab, 0.0);
    EXPECT_NEAR(ab, ba, 1e-6 * std::max(1.0, ab)) << layer;
  }
}

TEST(Sifid, GrowsWithNoise) {
  auto x = scenes::disc_scene({48, 80}).image;
  for (int seed = 0; seed < 5; ++seed) {
    double prev = 0.0;
    for (double sigma : {0.05, 0.2, 0.5}) {
      const double s = sifid(x, noisy(x, sigma, seed), 1);
      EXPECT_GT(s, prev) << "seed " << seed << " sigma " << sigma;
      prev = s;
    }
  }
}

TEST(Sifid, ReportMatchesDirectCalls) {
  auto x = scenes::disc_scene({48, 80}).image;
  auto y = noisy(x, 0.2, 3);
  auto& ex = FeatureExtractor::shared();
  auto report = sifid_report(fit_taps(ex, x), y, 7, ex);
  EXPECT_EQ(report.sample_id, 7);
  for (int l = 0; l < 4; ++l) {
    EXPECT_NEAR(report.per_layer[l], sifid(x, y, l + 1), 1e-6 * std::max(1.0, report.per_layer[l]));
  }
}

TEST(Extractor, TapShapesAndProvenance) {
  auto& ex = FeatureExtractor::shared();
  auto taps = ex.taps(torch::zeros({3, 96, 160}));
  EXPECT_EQ(taps[0].sizes(), (std::vector<int64_t>{1, 32, 48, 80}));
  EXPECT_EQ(taps[1].sizes(), (std::vector<int64_t>{1, 64, 24, 40}));
  EXPECT_EQ(taps[2].sizes(), (std::vector<int64_t>{1, 128, 24, 40}));
  EXPECT_EQ(taps[3].sizes(), (std::vector<int64_t>{1, 192, 12, 20}));
  EXPECT_EQ(ex.info().weights_sha256.size(), 64u);
  EXPECT_THROW(ex.patch_features(torch::zeros({3, 8, 8}), 5), std::invalid_argument);
}

TEST(Lpips, IdentityPermutationAndMean) {
  auto a = scenes::disc_scene({48, 80}).image;
  auto b = noisy(a, 0.2, 1), c = noisy(a, 0.4, 2);
  EXPECT_NEAR(lpips_distance(a, a), 0.0, 1e-6);
  auto same = lpips_diversity({a, a, a, a});
  EXPECT_NEAR(same.mean, 0.0, 1e-6);
  EXPECT_EQ(same.pairs, 6);

  const double ab = lpips_distance(a, b), ac = lpips_distance(a, c), bc = lpips_distance(b, c);
  EXPECT_NEAR(ab, lpips_distance(b, a), 1e-6);
  auto d1 = lpips_diversity({a, b, c});
  auto d2 = lpips_diversity({c, a, b});
  EXPECT_NEAR(d1.mean, (ab + ac + bc) / 3.0, 1e-6);
  EXPECT_NEAR(d1.mean, d2.mean, 1e-6);
  EXPECT_TRUE(d1.exhaustive);

  auto sampled = lpips_diversity({a, b, c}, 2, 5);
  EXPECT_EQ(sampled.pairs, 2);
  EXPECT_FALSE(sampled.exhaustive);
  EXPECT_THROW(lpips_diversity({a}), std::invalid_argument);
}

TEST(Iou, PerClassAndAbsentClasses) {
  auto ref = scenes::disc_scene({24, 40}).mask;
  auto background = torch::zeros_like(ref);
  auto ious = per_class_iou(background, ref, 3);
  EXPECT_GT(ious[0], 0.0);
  EXPECT_EQ(ious[1], 0.0);
  EXPECT_TRUE(std::isnan(ious[2]));
  EXPECT_NEAR(mean_present_iou(ious), ious[0] / 2.0, 1e-12);
  auto perfect = per_class_iou(ref, ref, 2);
  EXPECT_EQ(perfect[0], 1.0);
  EXPECT_EQ(perfect[1], 1.0);
}

TEST(Alignment, ReferenceViewsIdentityFirst) {
  auto ref = scenes::disc_scene({48, 80});
  auto views = reference_views(ref, 8, 3);
  ASSERT_EQ(views.size(), 9u);
  EXPECT_TRUE(torch::equal(views[0].first, ref.image));
  EXPECT_TRUE(torch::equal(views[0].second, ref.mask));
  auto again = reference_views(ref, 8, 3);
  for (std::size_t i = 0; i < views.size(); ++i) EXPECT_TRUE(torch::equal(views[i].second, again[i].second));
}

TEST(Alignment, ClassCountMismatchRejected) {
  auto ref = scenes::disc_scene({48, 80});
  auto other = ref;
  other.mask = other.mask.clone();
  other.mask[0][0] = 2;
  other.num_classes = 3;
  AlignmentOptions opts;
  opts.segmenter.epochs = 1;
  EXPECT_THROW(alignment_miou({other}, ref, opts), std::invalid_argument);
  EXPECT_THROW(alignment_miou({}, ref, opts), std::invalid_argument);
}

TEST(Alignment, GroundTruthPairsScoreWell) {
  auto ref = scenes::disc_scene({48, 80});
  AlignmentOptions opts;
  opts.segmenter.epochs = 60;
  opts.segmenter.seed = 4;
  auto score = alignment_miou({ref, ref, ref, ref}, ref, opts);
  EXPECT_EQ(score.views, 9);
  EXPECT_GT(score.unaugmented_miou, 0.8);
  EXPECT_GT(score.miou, 0.6);
  EXPECT_EQ(score.per_class_iou.size(), 2u);
}
