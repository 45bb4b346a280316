#pragma once

#include <torch/torch.h>

#include "pairgen/config.hpp"
#include "pairgen/data.hpp"

namespace pairgen::scenes {

// Red disc on a low-saturation striped background. Label 1 is the disc.
ImageMaskPair disc_scene(Resolution resolution);

// Segmentation of a disc scene image by colour alone: a pixel is the disc
// when its red channel exceeds both others by more than `margin`.
torch::Tensor color_threshold_labels(const torch::Tensor& image, double margin = 0.7);

double binary_iou(const torch::Tensor& a, const torch::Tensor& b);

}  // namespace pairgen::scenes
