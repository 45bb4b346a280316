#pragma once

#include <stdexcept>
#include <vector>

#include <torch/torch.h>

#include "pairgen/data.hpp"

namespace pairgen {

struct SegmenterConfig {
  int64_t epochs = 500;
  int64_t batch_size = 4;
  int64_t base_width = 8;
  double learning_rate = 1e-3;
  uint64_t seed = 0;
};

class SegmenterDiverged : public std::runtime_error {
 public:
  SegmenterDiverged(const std::string& what, double last_loss)
      : std::runtime_error(what), last_loss_(last_loss) {}
  double last_loss() const { return last_loss_; }

 private:
  double last_loss_;
};

// 4-down/4-up UNet. Inputs whose sides are not multiples of 16 are padded
// on the bottom/right and the logits cropped back.
class UNetImpl : public torch::nn::Module {
 public:
  UNetImpl(int64_t num_classes, int64_t base_width);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Sequential block(int64_t in, int64_t out);

  std::vector<torch::nn::Sequential> down_;
  torch::nn::Sequential bottom_{nullptr};
  std::vector<torch::nn::ConvTranspose2d> up_;
  std::vector<torch::nn::Sequential> merge_;
  torch::nn::Conv2d head_{nullptr};
};
TORCH_MODULE(UNet);

// Trains from scratch with cross-entropy and Adam at a fixed rate. One epoch
// is one pass over `pairs` in shuffled batches. Throws SegmenterDiverged on
// a non-finite loss.
UNet train_segmenter(const std::vector<ImageMaskPair>& pairs, const SegmenterConfig& config);

// (3,H,W) -> (H,W) int64 labels.
torch::Tensor predict_labels(UNet& net, const torch::Tensor& image);

}  // namespace pairgen
