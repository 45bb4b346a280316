#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "pairgen/config.hpp"

namespace pairgen {

// The single training datum.
//   image: float32 (3, H, W) in [-1, 1]
//   mask:  int64 (H, W), labels in [0, num_classes); 0 is background
struct ImageMaskPair {
  torch::Tensor image;
  torch::Tensor mask;
  int64_t num_classes = 0;
  std::vector<std::string> class_names;

  int64_t height() const { return mask.size(0); }
  int64_t width() const { return mask.size(1); }
};

// Validates shapes and label range. When num_classes is omitted it is
// inferred as max label + 1 and must be at least 2.
ImageMaskPair make_pair(torch::Tensor image, torch::Tensor mask,
                        std::optional<int64_t> num_classes = std::nullopt);

// Reads an RGB image and a single-channel indexed label map. When
// `expected` is given the pair must have exactly that resolution.
ImageMaskPair load_pair(const std::filesystem::path& image_path,
                        const std::filesystem::path& mask_path,
                        std::optional<Resolution> expected = std::nullopt);

// Resizes (bilinear image, nearest mask) to `target`. No-op at equal size.
ImageMaskPair fit_pair(const ImageMaskPair& pair, Resolution target);

// 8-bit RGB <-> [-1, 1] float. 0 maps to -1 and 255 to +1.
torch::Tensor image_from_rgb8(const torch::Tensor& rgb_hwc);
torch::Tensor image_to_rgb8(const torch::Tensor& image_chw);

torch::Tensor load_image(const std::filesystem::path& path);
torch::Tensor load_mask(const std::filesystem::path& path);
void save_image(const std::filesystem::path& path, const torch::Tensor& image_chw);
void save_mask(const std::filesystem::path& path, const torch::Tensor& mask_hw);
void save_pair(const std::filesystem::path& image_path, const std::filesystem::path& mask_path,
               const ImageMaskPair& pair);

// (H, W) -> (N, H, W) or (B, H, W) -> (B, N, H, W), float32 indicators.
torch::Tensor to_one_hot(const torch::Tensor& mask, int64_t num_classes);

// Per-pixel argmax over the channel dimension (dim -3); the lowest channel
// wins ties.
torch::Tensor one_hot_to_labels(const torch::Tensor& one_hot);

// Nearest-neighbour subsampling anchored at the top-left pixel of every
// block. Works on the last two dims of any tensor, so it also carries
// gradients through float masks. The scale must be an integer power of two.
torch::Tensor subsample_nearest(const torch::Tensor& tensor, Resolution target);

// Label-map form of subsample_nearest; rejects non-integer tensors.
torch::Tensor downsample_mask(const torch::Tensor& mask, Resolution target);

}  // namespace pairgen
