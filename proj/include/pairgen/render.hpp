#pragma once

#include <array>
#include <filesystem>
#include <vector>

#include <torch/torch.h>

namespace pairgen {

// Fixed colour for label `label`; background is black.
std::array<uint8_t, 3> palette_color(int64_t label);

// (H,W) labels -> (3,H,W) uint8 palette image.
torch::Tensor colorize_mask(const torch::Tensor& labels);

// Image in [-1,1] blended 50/50 with the palette on non-background pixels.
// Returns (3,H,W) uint8.
torch::Tensor overlay_mask(const torch::Tensor& image, const torch::Tensor& labels);

// Tiles equally sized (3,H,W) uint8 images row-major with a 2 px gap.
torch::Tensor tile_grid(const std::vector<torch::Tensor>& tiles, int64_t columns);

void save_rgb8(const std::filesystem::path& path, const torch::Tensor& rgb_chw);

}  // namespace pairgen
