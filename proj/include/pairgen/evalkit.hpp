#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "pairgen/data.hpp"
#include "pairgen/extractor.hpp"
#include "pairgen/segmenter.hpp"

namespace pairgen {

inline constexpr double kCovarianceEpsilon = 1e-6;

// Mean and covariance of a (n, d) feature matrix, in float64.
struct GaussianFit {
  torch::Tensor mean;        // (d)
  torch::Tensor covariance;  // (d, d)
  int64_t count = 0;
  bool regularized = false;  // count <= d, so eps*I was added
};

GaussianFit fit_gaussian(const torch::Tensor& features);
GaussianFit make_gaussian(torch::Tensor mean, torch::Tensor covariance);

// |mu1 - mu2|^2 + Tr(S1 + S2 - 2 (S1 S2)^{1/2}), clamped at 0.
double frechet_distance(const GaussianFit& a, const GaussianFit& b);

struct SifidReport {
  int64_t sample_id = 0;
  std::array<double, 4> per_layer{};
  std::array<bool, 4> regularized{};
};

// Gaussian fits of one image at all four tap points, reusable across many
// comparisons.
std::array<GaussianFit, 4> fit_taps(FeatureExtractor& extractor, const torch::Tensor& image);

double sifid(const torch::Tensor& real, const torch::Tensor& fake, int layer,
             FeatureExtractor& extractor = FeatureExtractor::shared());
SifidReport sifid_report(const std::array<GaussianFit, 4>& real, const torch::Tensor& fake,
                         int64_t sample_id,
                         FeatureExtractor& extractor = FeatureExtractor::shared());

// Spatially averaged squared distance of channel-normalised features at
// taps 1..3, summed over taps, with unit channel weights.
double lpips_distance(const torch::Tensor& a, const torch::Tensor& b,
                      FeatureExtractor& extractor = FeatureExtractor::shared());

struct LpipsReport {
  double mean = 0.0;
  int64_t pairs = 0;
  bool exhaustive = true;
};

// Mean over all unordered pairs, or over `max_pairs` seeded random pairs
// when the set has more pairs than that.
LpipsReport lpips_diversity(const std::vector<torch::Tensor>& samples,
                            std::optional<int64_t> max_pairs = std::nullopt, uint64_t seed = 0,
                            FeatureExtractor& extractor = FeatureExtractor::shared());

struct AlignmentScore {
  double miou = 0.0;
  std::vector<double> per_class_iou;  // NaN for classes absent from the reference
  double unaugmented_miou = 0.0;
  int64_t views = 0;
};

// IoU per class over classes present in `reference`; others NaN.
std::vector<double> per_class_iou(const torch::Tensor& predicted, const torch::Tensor& reference,
                                  int64_t num_classes);
double mean_present_iou(const std::vector<double>& ious);

struct AlignmentOptions {
  SegmenterConfig segmenter;
  int64_t views = 8;  // augmented reference views besides the identity
};

// Trains a segmenter on `generated` and scores it on the reference under a
// seeded flip/zoom/rotation view set (identity included). miou is the mean
// over views; unaugmented_miou is the identity view alone.
AlignmentScore alignment_miou(const std::vector<ImageMaskPair>& generated,
                              const ImageMaskPair& reference, const AlignmentOptions& options);

// The evaluation views: (image, mask) pairs, identity first.
std::vector<std::pair<torch::Tensor, torch::Tensor>> reference_views(const ImageMaskPair& reference,
                                                                     int64_t views, uint64_t seed);

}  // namespace pairgen
