#include <gtest/gtest.h>

#include <cmath>

#include "pairgen/data.hpp"
#include "pairgen/discmodel.hpp"

using namespace pairgen;

namespace {

// Pixel loop over an (C,h,w) map and an (h,w) label map.
std::vector<std::vector<double>> loop_means(const torch::Tensor& f, const torch::Tensor& labels,
                                            int64_t n) {
  const int64_t c = f.size(0), h = f.size(1), w = f.size(2);
  auto fa = f.accessor<float, 3>();
  auto la = labels.accessor<int64_t, 2>();
  std::vector<std::vector<double>> sums(n, std::vector<double>(c, 0.0));
  std::vector<double> count(n, 0.0);
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      const int64_t k = la[y][x];
      count[k] += 1.0;
      for (int64_t ch = 0; ch < c; ++ch) sums[k][ch] += fa[ch][y][x];
    }
  for (int64_t k = 0; k < n; ++k)
    for (auto& v : sums[k]) v = count[k] > 0 ? v / count[k] : 0.0;
  return sums;
}

RunConfig config_for(Resolution r, int64_t n_low, double m = 0.125) {
  RunConfig c;
  c.resolution = r;
  c.n_lowlevel_blocks = n_low;
  c.channel_multiplier = m;
  return c;
}

}  // namespace

TEST(DiscriminatorPlan, ReferenceShapes) {
  auto plan = DiscriminatorPlan::build(RunConfig{}, 3);
  EXPECT_EQ(plan.feature, (TensorShape{256, 24, 40}));
  const std::vector<TensorShape> layout{{1, 24, 40}, {1, 12, 20}, {1, 6, 10}, {1, 3, 5}, {1, 3, 5}};
  EXPECT_EQ(plan.layout_maps, layout);
}

TEST(DiscriminatorPlan, FeatureHalvesPerBlock) {
  for (int64_t k = 1; k <= 5; ++k) {
    auto plan = DiscriminatorPlan::build(config_for({384, 640}, k, 1.0), 2);
    EXPECT_EQ(plan.feature.height, 384 >> k);
    EXPECT_EQ(plan.feature.width, 640 >> k);
  }
  EXPECT_EQ(DiscriminatorPlan::build(config_for({384, 640}, 2, 1.0), 2).feature_resolution(),
            (Resolution{96, 160}));
}

TEST(Discriminator, ForwardShapes) {
  auto cfg = config_for({48, 80}, 3);
  const int64_t n = 3;
  Discriminator d(DiscriminatorPlan::build(cfg, n));
  init_parameters(d, 1);
  std::vector<torch::Tensor> images;
  for (int k = 0; k < 4; ++k) images.push_back(torch::randn({3, 3, 48 >> k, 80 >> k}));
  auto low = lowlevel_features(d, images);
  EXPECT_EQ(low.feature.sizes(), (std::vector<int64_t>{3, d->plan().feature.channels, 6, 10}));
  EXPECT_EQ(low.maps.size(), 3u);
  auto maps = layout_logits(d, low.feature);
  ASSERT_EQ(maps.size(), 5u);
  for (std::size_t i = 0; i < maps.size(); ++i) {
    EXPECT_EQ(maps[i].size(0), 3);
    EXPECT_EQ(maps[i].size(2), d->plan().layout_maps[i].height);
  }
  images.pop_back();
  EXPECT_THROW(lowlevel_features(d, images), std::invalid_argument);
}

TEST(Mca, MatchesPixelLoop) {
  torch::manual_seed(3);
  const int64_t n = 4;
  for (int trial = 0; trial < 20; ++trial) {
    auto f = torch::randn({2, 5, 6, 10});
    auto labels = torch::randint(0, n, {2, 6, 10}, torch::kLong);
    auto v = mca_from_labels(f, labels, n);
    for (int64_t b = 0; b < 2; ++b) {
      auto expected = loop_means(f[b], labels[b], n);
      for (int64_t k = 0; k < n; ++k) {
        for (int64_t ch = 0; ch < 5; ++ch) {
          EXPECT_NEAR(v.vectors[b][k][ch].item<double>(), expected[k][ch], 1e-6);
        }
      }
    }
  }
}

TEST(Mca, ConstantFeature) {
  auto f = torch::full({1, 4, 6, 10}, 2.5f);
  auto labels = torch::randint(0, 3, {1, 6, 10}, torch::kLong);
  auto v = mca_from_labels(f, labels, 3);
  for (int64_t k = 0; k < 3; ++k) {
    if (v.present[0][k].item<bool>()) {
      EXPECT_TRUE(torch::allclose(v.vectors[0][k], torch::full({4}, 2.5f)));
    }
  }
}

TEST(Mca, AllBackgroundFlags) {
  auto v = mca_from_labels(torch::randn({1, 4, 6, 10}), torch::zeros({1, 6, 10}, torch::kLong), 3);
  EXPECT_TRUE(torch::equal(v.present[0], torch::tensor({true, false, false})));
}

TEST(Mca, PermutationEquivariant) {
  torch::manual_seed(4);
  const int64_t n = 5;
  auto f = torch::randn({1, 8, 6, 10});
  auto labels = torch::randint(0, n, {1, 6, 10}, torch::kLong);
  auto perm = torch::tensor({2, 4, 0, 1, 3}, torch::kLong);  // label i -> perm[i]
  auto relabeled = perm.index({labels});
  auto a = mca_from_labels(f, labels, n);
  auto b = mca_from_labels(f, relabeled, n);
  for (int64_t i = 0; i < n; ++i) {
    const int64_t j = perm[i].item<int64_t>();
    EXPECT_TRUE(torch::equal(a.vectors[0][i], b.vectors[0][j]));
    EXPECT_EQ(a.present[0][i].item<bool>(), b.present[0][j].item<bool>());
  }
}

TEST(Mca, Locality) {
  torch::manual_seed(5);
  auto f = torch::randn({1, 3, 6, 10});
  auto labels = torch::randint(0, 3, {1, 6, 10}, torch::kLong);
  auto g = f.clone();
  auto region = labels.eq(1).unsqueeze(1).expand_as(g);
  g = torch::where(region, g + 7.0, g);
  auto a = mca_from_labels(f, labels, 3), b = mca_from_labels(g, labels, 3);
  EXPECT_TRUE(torch::equal(a.vectors[0][0], b.vectors[0][0]));
  EXPECT_TRUE(torch::equal(a.vectors[0][2], b.vectors[0][2]));
  EXPECT_FALSE(torch::equal(a.vectors[0][1], b.vectors[0][1]));
}

TEST(Mca, WeightedMeanIsGlobalMean) {
  torch::manual_seed(6);
  auto f = torch::randn({1, 4, 6, 10});
  auto labels = torch::randint(0, 3, {1, 6, 10}, torch::kLong);
  auto v = mca_from_labels(f, labels, 3);
  auto weighted = (v.vectors[0] * v.areas[0].unsqueeze(1)).sum(0) / v.areas[0].sum();
  EXPECT_TRUE(torch::allclose(weighted, f[0].mean({1, 2}), 0.0, 1e-5));
}

TEST(Mca, SpatialMismatchRejected) {
  EXPECT_THROW(mca_from_labels(torch::randn({1, 4, 6, 10}), torch::zeros({1, 3, 5}, torch::kLong), 2),
               std::invalid_argument);
}

TEST(Balancing, ClosedForms) {
  auto equal = torch::cat({torch::zeros({2, 4}, torch::kLong), torch::ones({2, 4}, torch::kLong)});
  auto a = balancing_weights(equal, 2);
  EXPECT_NEAR(a[0].item<double>(), 0.5, 1e-12);

  auto m = torch::zeros({4, 4}, torch::kLong);
  m[0] = 1;  // 25% object
  auto b = balancing_weights(m, 2);
  EXPECT_NEAR(b[0].item<double>(), 0.25, 1e-9);
  EXPECT_NEAR(b[1].item<double>(), 0.75, 1e-9);

  auto t = torch::zeros({4, 4}, torch::kLong);
  t[0] = 1;
  t[1] = 2;
  auto c = balancing_weights(t, 3);
  EXPECT_NEAR(c[0].item<double>(), 0.2, 1e-9);
  EXPECT_NEAR(c[1].item<double>(), 0.4, 1e-9);
  EXPECT_NEAR(c[2].item<double>(), 0.4, 1e-9);
}

TEST(Balancing, SumToOneAndMonotone) {
  torch::manual_seed(7);
  for (int trial = 0; trial < 20; ++trial) {
    auto labels = torch::randint(0, 6, {5, 9}, torch::kLong);
    labels.masked_fill_(labels.eq(5), 0);
    auto a = balancing_weights(labels, 6);
    EXPECT_NEAR(a.sum().item<double>(), 1.0, 1e-15);
    EXPECT_EQ(a[5].item<double>(), 0.0);
    auto counts = torch::bincount(labels.flatten(), {}, 6);
    for (int i = 0; i < 6; ++i)
      for (int j = 0; j < 6; ++j) {
        const auto ci = counts[i].item<int64_t>(), cj = counts[j].item<int64_t>();
        if (ci > 0 && cj > 0 && ci < cj) EXPECT_GE(a[i].item<double>(), a[j].item<double>());
      }
  }
}

TEST(ObjectLogits, RowsForPresentVectorsOnly) {
  auto cfg = config_for({24, 40}, 3);
  const int64_t n = 3;
  Discriminator d(DiscriminatorPlan::build(cfg, n));
  init_parameters(d, 2);
  const int64_t c = d->plan().feature.channels;
  auto f = torch::randn({2, c, 3, 5});
  auto labels = torch::zeros({2, 3, 5}, torch::kLong);
  labels[0][0][0] = 1;
  labels[0][1][1] = 2;
  labels[1][2][2] = 2;
  auto v = mca_from_labels(f, labels, n);
  auto logits = object_logits(d, v);
  EXPECT_EQ(logits.logits.sizes(), (std::vector<int64_t>{5, n + 1}));
  EXPECT_TRUE(torch::equal(logits.sample, torch::tensor({0, 0, 0, 1, 1}, torch::kLong)));
  EXPECT_TRUE(torch::equal(logits.identity, torch::tensor({0, 1, 2, 0, 2}, torch::kLong)));
}

TEST(ObjectLogits, PermutationPermutesRows) {
  auto cfg = config_for({24, 40}, 3);
  Discriminator d(DiscriminatorPlan::build(cfg, 3));
  init_parameters(d, 3);
  const int64_t c = d->plan().feature.channels;
  auto x = torch::randn({3, c});
  auto perm = torch::tensor({2, 0, 1}, torch::kLong);
  auto a = d->object_head(x).index_select(0, perm);
  auto b = d->object_head(x.index_select(0, perm));
  EXPECT_TRUE(torch::allclose(a, b, 1e-6, 1e-6));
}

TEST(Layout, DifferentInputsDifferentMaps) {
  auto cfg = config_for({48, 80}, 3);
  Discriminator d(DiscriminatorPlan::build(cfg, 2));
  init_parameters(d, 4);
  const int64_t c = d->plan().feature.channels;
  auto a = layout_logits(d, torch::randn({1, c, 6, 10}));
  auto b = layout_logits(d, torch::randn({1, c, 6, 10}));
  EXPECT_FALSE(torch::equal(a[0], b[0]));
}
