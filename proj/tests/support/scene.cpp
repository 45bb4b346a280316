#include "scene.hpp"

#include <cmath>
#include <numbers>

namespace pairgen::scenes {

ImageMaskPair disc_scene(Resolution resolution) {
  const int64_t h = resolution.height, w = resolution.width;
  auto ys = torch::arange(h, torch::kFloat32).view({h, 1}).expand({h, w});
  auto xs = torch::arange(w, torch::kFloat32).view({1, w}).expand({h, w});
  const double period = std::max<double>(4.0, static_cast<double>(h) / 8.0);
  auto texture = 0.25 * torch::sin((xs + 0.5 * ys) * (2.0 * std::numbers::pi / period));
  auto image = torch::stack({texture - 0.2, texture, texture + 0.2});

  const double cy = 0.5 * h, cx = 0.4 * w, r = 0.28 * h;
  auto inside = ((ys + 0.5 - cy).pow(2) + (xs + 0.5 - cx).pow(2)).le(r * r);
  auto red = torch::tensor({0.9f, -0.8f, -0.8f}).view({3, 1, 1}).expand({3, h, w});
  image = torch::where(inside.unsqueeze(0), red, image).contiguous();
  return make_pair(image, inside.to(torch::kLong), 2);
}

torch::Tensor color_threshold_labels(const torch::Tensor& image, double margin) {
  auto r = image[0], g = image[1], b = image[2];
  return (r - torch::max(g, b)).gt(margin).to(torch::kLong);
}

double binary_iou(const torch::Tensor& a, const torch::Tensor& b) {
  auto fa = a.gt(0), fb = b.gt(0);
  const double uni = static_cast<double>((fa | fb).sum().item<int64_t>());
  if (uni == 0.0) return 1.0;
  return static_cast<double>((fa & fb).sum().item<int64_t>()) / uni;
}

}  // namespace pairgen::scenes
