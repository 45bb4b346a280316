#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>

#include <torch/torch.h>

#include "pairgen/config.hpp"

namespace pairgen {

// Environment variable naming a weights file for the perceptual extractor.
inline constexpr const char* kExtractorWeightsEnv = "PAIRGEN_EXTRACTOR_WEIGHTS";
inline constexpr uint64_t kExtractorSeed = 0x51f1d;

struct ExtractorInfo {
  Resolution input{192, 320};
  std::string resize = "bilinear";
  std::string weights_source;  // "builtin-seeded" or a file path
  std::string weights_sha256;
};

// Inception-style branch block: 1x1, 1x1-3x3, 1x1-3x3-3x3 and pool-1x1
// branches concatenated.
class MixedBlockImpl : public torch::nn::Module {
 public:
  MixedBlockImpl(int64_t in, int64_t b1, int64_t b2_mid, int64_t b2, int64_t b3_mid, int64_t b3,
                 int64_t pool_proj, int64_t stride);
  torch::Tensor forward(const torch::Tensor& x);
  int64_t out_channels() const { return out_; }

 private:
  int64_t stride_, out_;
  torch::nn::Conv2d b1_{nullptr}, b2a_{nullptr}, b2b_{nullptr}, b3a_{nullptr}, b3b_{nullptr},
      b3c_{nullptr}, pool_{nullptr};
};
TORCH_MODULE(MixedBlock);

// Four tap points:
//   1: after the first max pool   (32 channels, 1/4)
//   2: after the second max pool  (64 channels, 1/8)
//   3: mixed block output          (128 channels, 1/8)
//   4: final features before pooling (192 channels, 1/16)
class ExtractorNetImpl : public torch::nn::Module {
 public:
  ExtractorNetImpl();
  std::array<torch::Tensor, 4> forward(const torch::Tensor& x);

 private:
  torch::nn::Conv2d stem1_{nullptr}, stem2_{nullptr}, conv3_{nullptr}, conv4_{nullptr};
  MixedBlock mixed_a_{nullptr}, mixed_b_{nullptr};
};
TORCH_MODULE(ExtractorNet);

class FeatureExtractor {
 public:
  // Without a path the weights are drawn from a fixed seed, so every build
  // computes identical features.
  explicit FeatureExtractor(std::optional<std::filesystem::path> weights = std::nullopt);

  // Process-wide instance; honours kExtractorWeightsEnv.
  static FeatureExtractor& shared();

  // image: (3,H,W) or (B,3,H,W) in [-1,1]; resized to info().input.
  std::array<torch::Tensor, 4> taps(const torch::Tensor& image);

  // (positions, channels) patch features of a single image at tap 1..4.
  torch::Tensor patch_features(const torch::Tensor& image, int layer);

  const ExtractorInfo& info() const { return info_; }
  void save_weights(const std::filesystem::path& path) const;

 private:
  ExtractorNet net_;
  ExtractorInfo info_;
};

}  // namespace pairgen
