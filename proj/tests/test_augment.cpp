#include <gtest/gtest.h>

#include <numbers>

#include "pairgen/augment.hpp"
#include "pairgen/data.hpp"
#include "scene.hpp"

using namespace pairgen;

namespace {

AugmentationPolicy only(std::vector<Transform> t, double p = 1.0) {
  AugmentationPolicy policy;
  policy.transforms = std::move(t);
  policy.probability = p;
  return policy;
}

// Analytic disc raster at (cy, cx) with radius r, pixel centres.
torch::Tensor disc(int64_t h, int64_t w, double cy, double cx, double r) {
  auto ys = torch::arange(h, torch::kFloat64).add(0.5).view({h, 1});
  auto xs = torch::arange(w, torch::kFloat64).add(0.5).view({1, w});
  return ((ys - cy).pow(2) + (xs - cx).pow(2)).le(r * r).to(torch::kLong);
}

}  // namespace

TEST(Augment, FlipIsExactOnMask) {
  auto pair = scenes::disc_scene({24, 40});
  auto oh = to_one_hot(pair.mask, 2).unsqueeze(0);
  auto params = geometric_params(true, 0, 1.0, 0, 0, 0, {24, 40});
  auto out = apply_to_masks(oh, {params});
  EXPECT_TRUE(torch::equal(one_hot_to_labels(out)[0], pair.mask.flip(1)));
  auto img = apply_to_images(pair.image.unsqueeze(0), {params});
  EXPECT_TRUE(torch::allclose(img[0], pair.image.flip(2), 0.0, 1e-5));
}

TEST(Augment, AppearanceOnlyLeavesMaskBitExact) {
  auto pair = scenes::disc_scene({24, 40});
  auto policy = only({Transform::kBrightness, Transform::kContrast, Transform::kSaturation,
                      Transform::kHue, Transform::kNoise, Transform::kCutout});
  auto oh = to_one_hot(pair.mask, 2);
  for (uint64_t seed = 0; seed < 10; ++seed) {
    auto [img, m] = augment_pair(pair.image, oh, policy, seed);
    EXPECT_TRUE(torch::equal(m, oh));
  }
}

TEST(Augment, Rotate90KeepsDiscAligned) {
  const int64_t s = 64;
  auto mask = disc(s, s, 24.0, 36.0, 12.0);
  auto oh = to_one_hot(mask, 2).unsqueeze(0);
  auto params = geometric_params(false, 1, 1.0, 0, 0, 0, {s, s});
  auto labels = one_hot_to_labels(apply_to_masks(oh, {params}))[0];
  // A quarter turn maps the disc onto one of the two candidate centres.
  auto a = disc(s, s, 36.0, 40.0, 12.0), b = disc(s, s, 28.0, 24.0, 12.0);
  const double iou = std::max(scenes::binary_iou(labels, a), scenes::binary_iou(labels, b));
  EXPECT_GE(iou, 0.98);
}

TEST(Augment, NoLabelInvented) {
  torch::manual_seed(2);
  auto mask = torch::randint(0, 2, {24, 40}, torch::kLong) * 2;  // labels {0,2}
  auto oh = to_one_hot(mask, 3);
  auto policy = only({Transform::kXFlip, Transform::kRotate90, Transform::kTranslateInt,
                      Transform::kScale, Transform::kTranslateFrac});
  for (uint64_t seed = 0; seed < 20; ++seed) {
    auto [img, m] = augment_pair(torch::zeros({3, 24, 40}), oh, policy, seed);
    auto labels = one_hot_to_labels(m);
    EXPECT_FALSE(labels.eq(1).any().item<bool>());
    EXPECT_TRUE(torch::equal(m.sum(0), torch::ones({24, 40})));
  }
}

TEST(Augment, RevealedPixelsAreZeroAndBackground) {
  auto image = torch::ones({1, 3, 16, 16});
  auto mask = to_one_hot(torch::ones({16, 16}, torch::kLong), 2).unsqueeze(0);
  auto params = geometric_params(false, 0, 1.0, 4.0, 0.0, 0.0, {16, 16});
  auto img = apply_to_images(image, {params});
  auto m = one_hot_to_labels(apply_to_masks(mask, {params}))[0];
  EXPECT_EQ(img[0][0][8][1].item<float>(), 0.f);
  EXPECT_EQ(m[8][1].item<int64_t>(), 0);
  EXPECT_EQ(m[8][10].item<int64_t>(), 1);
}

TEST(Augment, Deterministic) {
  auto pair = scenes::disc_scene({24, 40});
  auto policy = AugmentationPolicy::all(0.5);
  auto oh = to_one_hot(pair.mask, 2);
  auto a = augment_pair(pair.image, oh, policy, 42);
  auto b = augment_pair(pair.image, oh, policy, 42);
  EXPECT_TRUE(torch::equal(a.first, b.first));
  EXPECT_TRUE(torch::equal(a.second, b.second));
}

TEST(Augment, ZeroProbabilityIsIdentity) {
  auto pair = scenes::disc_scene({24, 40});
  auto oh = to_one_hot(pair.mask, 2);
  auto [img, m] = augment_pair(pair.image, oh, AugmentationPolicy::all(0.0), 1);
  EXPECT_TRUE(torch::equal(img, pair.image));
  EXPECT_TRUE(torch::equal(m, oh));
}

TEST(Augment, GeometryGradientMatchesFiniteDifferences) {
  torch::manual_seed(3);
  auto x = torch::randn({1, 3, 8, 12}, torch::kFloat64);
  auto weights = torch::randn({1, 3, 8, 12}, torch::kFloat64);
  for (auto params : {geometric_params(false, 0, 1.3, 0, 0, 0, {8, 12}),
                      geometric_params(false, 0, 1.0, 1.7, -0.6, 0, {8, 12})}) {
    auto xv = x.clone().requires_grad_(true);
    auto loss = (apply_to_images(xv, {params}) * weights).sum();
    loss.backward();
    auto grad = xv.grad();
    const double h = 1e-4;
    double max_err = 0.0;
    for (int64_t i = 0; i < x.numel(); i += 7) {
      auto xp = x.clone(), xm = x.clone();
      xp.view({-1})[i] += h;
      xm.view({-1})[i] -= h;
      const double fd = ((apply_to_images(xp, {params}) * weights).sum().item<double>() -
                         (apply_to_images(xm, {params}) * weights).sum().item<double>()) /
                        (2 * h);
      max_err = std::max(max_err, std::abs(fd - grad.view({-1})[i].item<double>()));
    }
    EXPECT_LT(max_err, 1e-3);
  }
}

TEST(Augment, SameDrawAcrossScales) {
  // Flips and quarter turns on the full and half-resolution image agree after pooling.
  auto pair = scenes::disc_scene({24, 40});
  auto full = pair.image.unsqueeze(0);
  auto half = torch::nn::functional::avg_pool2d(full, torch::nn::functional::AvgPool2dFuncOptions(2));
  auto policy = only({Transform::kXFlip, Transform::kRotate90});
  Rng rng(9);
  auto out = augment_batch({full, half}, to_one_hot(pair.mask, 2).unsqueeze(0), policy, rng);
  auto pooled = torch::nn::functional::avg_pool2d(out.images[0],
                                                  torch::nn::functional::AvgPool2dFuncOptions(2));
  EXPECT_TRUE(torch::allclose(pooled, out.images[1], 0.0, 1e-4));
}

TEST(ContentFa, ObjectVectorsPassThrough) {
  ContentVectorSet v{torch::randn({3, 4, 6}), torch::ones({3, 4}, torch::kBool),
                     torch::ones({3, 4})};
  auto out = content_fa(v, 1.0, uint64_t{5});
  EXPECT_TRUE(torch::equal(out.vectors.narrow(1, 1, 3), v.vectors.narrow(1, 1, 3)));
  EXPECT_FALSE(torch::equal(out.vectors.select(1, 0), v.vectors.select(1, 0)));
}

TEST(ContentFa, WeightEndpoints) {
  auto vecs = torch::randn({2, 3, 4});
  ContentVectorSet v{vecs, torch::ones({2, 3}, torch::kBool), torch::ones({2, 3})};
  auto zero = mix_background(v, {1, 0}, {0.0, 0.0});
  EXPECT_TRUE(torch::equal(zero.vectors, vecs));
  auto half = mix_background(v, {1, 0}, {0.5, 0.0});
  auto expected = (vecs[0][0] + vecs[1][0]) / 2;
  EXPECT_TRUE(torch::allclose(half.vectors[0][0], expected, 0.0, 1e-6));
  EXPECT_TRUE(torch::equal(half.vectors[1][0], vecs[1][0]));
}

TEST(ContentFa, BatchOfOneIsIdentity) {
  ContentVectorSet v{torch::randn({1, 3, 4}), torch::ones({1, 3}, torch::kBool), torch::ones({1, 3})};
  EXPECT_TRUE(torch::equal(content_fa(v, 1.0, uint64_t{1}).vectors, v.vectors));
}

TEST(LayoutFa, BackgroundSwapLeavesObjects) {
  auto f = torch::randn({2, 4, 6, 10});
  auto labels = torch::zeros({2, 6, 10}, torch::kLong);
  labels.index_put_({0, torch::indexing::Slice(1, 3), torch::indexing::Slice(2, 5)}, 1);
  auto selected = torch::zeros({2, 2}, torch::kBool);
  selected[0][0] = true;
  auto out = swap_regions(f, labels, {1, 0}, selected);
  auto obj = labels[0].eq(1).unsqueeze(0).expand({4, 6, 10});
  EXPECT_TRUE(torch::equal(out[0].masked_select(obj), f[0].masked_select(obj)));
  EXPECT_TRUE(torch::equal(out[0].masked_select(~obj), f[1].masked_select(~obj)));
  EXPECT_TRUE(torch::equal(out[1], f[1]));
}

TEST(LayoutFa, WholeMapSwapExchanges) {
  auto f = torch::randn({2, 4, 6, 10});
  auto labels = torch::randint(0, 3, {2, 6, 10}, torch::kLong);
  auto out = swap_regions(f, labels, {1, 0}, torch::ones({2, 3}, torch::kBool));
  EXPECT_TRUE(torch::equal(out[0], f[1]));
  EXPECT_TRUE(torch::equal(out[1], f[0]));
}

TEST(LayoutFa, HandAssembledMosaic) {
  auto f = torch::arange(2 * 1 * 3 * 4, torch::kFloat32).view({2, 1, 3, 4});
  auto labels = torch::tensor({0, 0, 1, 1, 0, 2, 1, 0, 2, 2, 0, 0,  //
                               0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0},
                              torch::kLong)
                    .view({2, 3, 4});
  auto selected = torch::zeros({2, 3}, torch::kBool);
  selected[0][1] = true;
  auto out = swap_regions(f, labels, {1, 0}, selected);
  auto expected = f.clone();
  const std::pair<int, int> region[] = {{0, 2}, {0, 3}, {1, 2}};
  for (auto [y, x] : region) expected[0][0][y][x] = f[1][0][y][x];
  EXPECT_TRUE(torch::equal(out, expected));
}

TEST(LayoutFa, SwappedAreaIsUnionOfRegions) {
  torch::manual_seed(8);
  for (uint64_t seed = 0; seed < 10; ++seed) {
    auto f = torch::randn({3, 2, 6, 10});
    auto labels = torch::randint(0, 4, {3, 6, 10}, torch::kLong);
    auto out = layout_fa(f, labels, 4, 1.0, seed);
    for (int64_t b = 0; b < 3; ++b) {
      auto changed = out[b].ne(f[b]).any(0);
      for (int64_t k = 0; k < 4; ++k) {
        auto region = labels[b].eq(k);
        if (!region.any().item<bool>()) continue;
        const auto n_changed = changed.masked_select(region).sum().item<int64_t>();
        EXPECT_TRUE(n_changed == 0 || n_changed == region.sum().item<int64_t>());
      }
    }
  }
}

TEST(LayoutFa, DifferentiableInBothInputs) {
  auto f = torch::randn({2, 2, 3, 5}).requires_grad_(true);
  auto labels = torch::randint(0, 2, {2, 3, 5}, torch::kLong);
  auto selected = torch::zeros({2, 2}, torch::kBool);
  selected[0][0] = selected[0][1] = true;
  swap_regions(f, labels, {1, 0}, selected).sum().backward();
  EXPECT_GT(f.grad()[1].abs().sum().item<float>(), 0.f);
}
