#pragma once

#include <string>
#include <vector>

#include <torch/torch.h>

#include "pairgen/config.hpp"
#include "pairgen/genmodel.hpp"

namespace pairgen {

struct DownStage {
  int64_t in_channels = 0;   // including the side input, if any
  int64_t side_channels = 0; // 0 when no image scale joins at this stage
  TensorShape output;
};

// Layer plan of the three-part discriminator.
//   low-level trunk: one residual down-block per level; block 0 reads a
//     convolution of the full-resolution image, blocks 1..3 also read a
//     convolution of the matching coarser image (multi-scale gradients).
//   object head: masked content vectors -> 4 residual vector blocks -> N+1 logits.
//   layout head: 1-channel squeeze of F -> 4 residual down-blocks; each of the
//     5 maps is a patch logit map.
struct DiscriminatorPlan {
  int64_t num_classes = 0;
  TensorShape input;                 // full-resolution image
  int64_t first_side_channels = 0;   // conv on the full-resolution image
  std::vector<DownStage> lowlevel;
  TensorShape feature;               // F
  int64_t object_blocks = 4;
  std::vector<TensorShape> layout_maps;

  static DiscriminatorPlan build(const RunConfig& config, int64_t num_classes);
  Resolution feature_resolution() const { return {feature.height, feature.width}; }
  std::string describe() const;
};

// Per-sample masked means of F.
//   vectors: (B, N, C); rows of absent regions are zero
//   present: (B, N) bool, region area > 0
//   areas:   (B, N) pixel counts on the feature grid
struct ContentVectorSet {
  torch::Tensor vectors;
  torch::Tensor present;
  torch::Tensor areas;
};

// Logit rows for present vectors only.
//   logits:   (M, N+1), last column is the fake class
//   sample:   (M) batch index of each row
//   identity: (M) class index of each row
struct ObjectLogits {
  torch::Tensor logits;
  torch::Tensor sample;
  torch::Tensor identity;
  int64_t batch_size = 0;
};

struct LowLevelOutput {
  torch::Tensor feature;             // F
  std::vector<torch::Tensor> maps;   // one (B,1,h,w) logit map per block
};

class ResBlockDownImpl : public torch::nn::Module {
 public:
  ResBlockDownImpl(int64_t in_channels, int64_t out_channels, bool downsample);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  bool downsample_;
  torch::nn::Conv2d conv1_{nullptr}, conv2_{nullptr}, skip_{nullptr};
};
TORCH_MODULE(ResBlockDown);

class VectorBlockImpl : public torch::nn::Module {
 public:
  explicit VectorBlockImpl(int64_t channels);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Linear fc1_{nullptr}, fc2_{nullptr};
};
TORCH_MODULE(VectorBlock);

class DiscriminatorImpl : public torch::nn::Module {
 public:
  explicit DiscriminatorImpl(DiscriminatorPlan plan);

  // images: four (B,3,h,w) scales, finest first.
  LowLevelOutput lowlevel(const std::vector<torch::Tensor>& images);
  // (M, C) -> (M, N+1)
  torch::Tensor object_head(const torch::Tensor& vectors);
  std::vector<torch::Tensor> layout(const torch::Tensor& feature);

  const DiscriminatorPlan& plan() const { return plan_; }

 private:
  DiscriminatorPlan plan_;
  torch::nn::ModuleList side_convs_;
  torch::nn::ModuleList lowlevel_blocks_;
  torch::nn::ModuleList lowlevel_heads_;
  torch::nn::ModuleList object_blocks_;
  torch::nn::Linear object_out_{nullptr};
  torch::nn::Conv2d layout_squeeze_{nullptr};
  torch::nn::ModuleList layout_blocks_;
};
TORCH_MODULE(Discriminator);

LowLevelOutput lowlevel_features(Discriminator& disc, const std::vector<torch::Tensor>& images);

// Masked content attention. `mask` is a (B,N,h,w) float indicator map on
// F's grid (possibly straight-through); each vector is the mean of F over
// its own region. Gradients reach both F and the mask.
ContentVectorSet mca(const torch::Tensor& feature, const torch::Tensor& mask);

// Same, from an integer (B,h,w) label map.
ContentVectorSet mca_from_labels(const torch::Tensor& feature, const torch::Tensor& labels,
                                 int64_t num_classes);

// Inverse-area class weights, float64. (h,w) -> (N); (B,h,w) -> (B,N).
// Absent classes get 0; present weights sum to 1.
torch::Tensor balancing_weights(const torch::Tensor& labels, int64_t num_classes);

ObjectLogits object_logits(Discriminator& disc, const ContentVectorSet& vectors);

std::vector<torch::Tensor> layout_logits(Discriminator& disc, const torch::Tensor& feature);

void init_parameters(Discriminator& disc, uint64_t seed);

}  // namespace pairgen
