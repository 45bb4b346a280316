#pragma once

#include <array>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "pairgen/config.hpp"
#include "pairgen/discmodel.hpp"
#include "pairgen/rng.hpp"

namespace pairgen {

enum class Transform {
  kXFlip,
  kRotate90,
  kTranslateInt,
  kScale,
  kTranslateFrac,
  kBrightness,
  kContrast,
  kSaturation,
  kHue,
  kNoise,
  kCutout,
};

std::string to_string(Transform t);
bool is_geometric(Transform t);

// Transforms applied to discriminator inputs. Each listed transform fires
// independently with `probability` per sample; feature augmentation fires
// with `fa_probability` per sample.
struct AugmentationPolicy {
  std::vector<Transform> transforms;
  double probability = 0.3;
  double fa_probability = 0.3;

  static AugmentationPolicy all(double probability);
  static AugmentationPolicy from_config(const RunConfig& config);
};

// One sample's draw. The affine part maps output coordinates to input
// coordinates in grid_sample's normalised space, so the same draw applies
// to every scale of a multi-scale input.
struct AugmentParams {
  bool geometric = false;
  std::array<double, 6> theta{1, 0, 0, 0, 1, 0};
  // Colour: x' = color * x + offset, per pixel in RGB.
  std::array<double, 9> color{1, 0, 0, 0, 1, 0, 0, 0, 1};
  std::array<double, 3> offset{0, 0, 0};
  bool color_active = false;
  double noise_std = 0.0;
  uint64_t noise_seed = 0;
  bool cutout = false;
  double cutout_cy = 0.5, cutout_cx = 0.5, cutout_h = 0.5, cutout_w = 0.5;  // fractions
};

// `frame` is the full-resolution size; integer translations are whole
// pixels of that frame.
AugmentParams sample_params(const AugmentationPolicy& policy, Rng& rng, Resolution frame);

// Forward geometric map helpers, in centred pixel units of a frame with the
// given size. Exposed for tests and the evaluation transform set.
AugmentParams geometric_params(bool flip, int rot90, double scale, double tx_pixels,
                               double ty_pixels, double rotate_radians, Resolution frame);

// image: (B,3,h,w), one params entry per sample. Bilinear resampling, zero fill.
torch::Tensor apply_to_images(const torch::Tensor& images, const std::vector<AugmentParams>& params);

// mask: (B,N,h,w) indicator maps. Nearest resampling; revealed pixels become
// background. Appearance transforms never touch the mask.
torch::Tensor apply_to_masks(const torch::Tensor& masks, const std::vector<AugmentParams>& params);

// Single pair: image (3,H,W), one-hot mask (N,H,W).
std::pair<torch::Tensor, torch::Tensor> augment_pair(const torch::Tensor& image,
                                                     const torch::Tensor& mask,
                                                     const AugmentationPolicy& policy,
                                                     uint64_t seed);

struct AugmentedBatch {
  std::vector<torch::Tensor> images;  // per scale, finest first
  torch::Tensor masks;                // (B,N,H,W)
};

AugmentedBatch augment_batch(const std::vector<torch::Tensor>& images, const torch::Tensor& masks,
                             const AugmentationPolicy& policy, Rng& rng);

// Replaces each background vector by (1-w) * own + w * partner's background.
// Object vectors and flags pass through.
ContentVectorSet mix_background(const ContentVectorSet& vectors, const std::vector<int64_t>& partner,
                                const std::vector<double>& weight);

// Background-only content mixing, fired per sample with `probability`.
// Batch size 1 is the identity.
ContentVectorSet content_fa(const ContentVectorSet& vectors, double probability, Rng& rng);
ContentVectorSet content_fa(const ContentVectorSet& vectors, double probability, uint64_t seed);

// For sample b, copies partner[b]'s features into the union of the regions
// selected[b] (a (B,N) bool tensor) of b's own label map.
torch::Tensor swap_regions(const torch::Tensor& feature, const torch::Tensor& labels,
                           const std::vector<int64_t>& partner, const torch::Tensor& selected);

// Layout mixing whose swapped area is always a union of whole label
// regions. Batch size 1 is the identity.
torch::Tensor layout_fa(const torch::Tensor& feature, const torch::Tensor& labels,
                        int64_t num_classes, double probability, Rng& rng);
torch::Tensor layout_fa(const torch::Tensor& feature, const torch::Tensor& labels,
                        int64_t num_classes, double probability, uint64_t seed);

}  // namespace pairgen
