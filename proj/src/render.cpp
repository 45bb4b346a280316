#include "pairgen/render.hpp"

#include <opencv2/imgcodecs.hpp>

#include "pairgen/data.hpp"

namespace pairgen {
namespace {

constexpr std::array<std::array<uint8_t, 3>, 12> kPalette{{
    {230, 25, 75},  {60, 180, 75},  {255, 225, 25}, {0, 130, 200},
    {245, 130, 48}, {145, 30, 180}, {70, 240, 240}, {240, 50, 230},
    {210, 245, 60}, {250, 190, 212}, {0, 128, 128}, {170, 110, 40},
}};

torch::Tensor palette_table(int64_t n) {
  auto t = torch::empty({n, 3}, torch::kUInt8);
  for (int64_t i = 0; i < n; ++i) {
    auto c = palette_color(i);
    for (int k = 0; k < 3; ++k) t[i][k] = c[k];
  }
  return t;
}

}  // namespace

std::array<uint8_t, 3> palette_color(int64_t label) {
  if (label <= 0) return {0, 0, 0};
  return kPalette[static_cast<std::size_t>(label - 1) % kPalette.size()];
}

torch::Tensor colorize_mask(const torch::Tensor& labels) {
  auto l = labels.to(torch::kLong);
  const int64_t n = l.numel() ? l.max().item<int64_t>() + 1 : 1;
  return palette_table(n).index({l}).permute({2, 0, 1}).contiguous();
}

torch::Tensor overlay_mask(const torch::Tensor& image, const torch::Tensor& labels) {
  auto rgb = image_to_rgb8(image).permute({2, 0, 1}).to(torch::kFloat32);
  auto color = colorize_mask(labels).to(torch::kFloat32);
  auto fg = labels.gt(0).unsqueeze(0);
  auto blended = torch::where(fg, 0.5 * rgb + 0.5 * color, rgb);
  return blended.round().clamp(0, 255).to(torch::kUInt8);
}

torch::Tensor tile_grid(const std::vector<torch::Tensor>& tiles, int64_t columns) {
  if (tiles.empty()) throw std::invalid_argument("tile_grid: no tiles");
  const int64_t h = tiles[0].size(1), w = tiles[0].size(2), gap = 2;
  const int64_t n = static_cast<int64_t>(tiles.size());
  const int64_t cols = std::min(columns, n);
  const int64_t rows = (n + cols - 1) / cols;
  auto grid = torch::full({3, rows * h + (rows - 1) * gap, cols * w + (cols - 1) * gap}, 255,
                          torch::kUInt8);
  for (int64_t i = 0; i < n; ++i) {
    if (tiles[i].size(1) != h || tiles[i].size(2) != w) {
      throw std::invalid_argument("tile_grid: tiles differ in size");
    }
    const int64_t r = i / cols, c = i % cols;
    grid.slice(1, r * (h + gap), r * (h + gap) + h).slice(2, c * (w + gap), c * (w + gap) + w)
        .copy_(tiles[i]);
  }
  return grid;
}

void save_rgb8(const std::filesystem::path& path, const torch::Tensor& rgb_chw) {
  auto hwc = rgb_chw.permute({1, 2, 0}).flip(2).contiguous();
  cv::Mat view(static_cast<int>(hwc.size(0)), static_cast<int>(hwc.size(1)), CV_8UC3,
               hwc.data_ptr<uint8_t>());
  if (!cv::imwrite(path.string(), view)) throw std::runtime_error("cannot write " + path.string());
}

}  // namespace pairgen
