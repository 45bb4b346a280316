#include "pairgen/data.hpp"

#include <stdexcept>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

namespace pairgen {
namespace {

std::string shape_string(const torch::Tensor& t) {
  std::string s = "(";
  for (int64_t i = 0; i < t.dim(); ++i) {
    if (i) s += ",";
    s += std::to_string(t.size(i));
  }
  return s + ")";
}

bool is_integer_tensor(const torch::Tensor& t) {
  return !t.is_floating_point() && !t.is_complex() && t.scalar_type() != torch::kBool;
}

int64_t exact_power_of_two_ratio(int64_t src, int64_t dst) {
  if (dst <= 0 || src % dst != 0) return 0;
  const int64_t f = src / dst;
  return (f & (f - 1)) == 0 ? f : 0;
}

}  // namespace

ImageMaskPair make_pair(torch::Tensor image, torch::Tensor mask,
                        std::optional<int64_t> num_classes) {
  if (image.dim() != 3 || image.size(0) != 3) {
    throw std::invalid_argument("image must have shape (3,H,W), got " + shape_string(image));
  }
  if (mask.dim() != 2) {
    throw std::invalid_argument("mask must have shape (H,W), got " + shape_string(mask));
  }
  if (!is_integer_tensor(mask)) {
    throw std::invalid_argument("mask must hold integer labels");
  }
  if (image.size(1) != mask.size(0) || image.size(2) != mask.size(1)) {
    throw std::invalid_argument("image/mask dimension mismatch: image " + shape_string(image) +
                                " vs mask " + shape_string(mask));
  }
  mask = mask.to(torch::kLong).contiguous();
  if (mask.min().item<int64_t>() < 0) throw std::invalid_argument("mask has negative labels");
  const int64_t max_label = mask.max().item<int64_t>();
  const int64_t n = num_classes.value_or(max_label + 1);
  if (max_label >= n) {
    throw std::invalid_argument("mask label " + std::to_string(max_label) +
                                " out of range for N=" + std::to_string(n));
  }
  if (n < 2) throw std::invalid_argument("mask contains only background");

  ImageMaskPair pair;
  pair.image = image.to(torch::kFloat).contiguous();
  pair.mask = mask;
  pair.num_classes = n;
  return pair;
}

torch::Tensor image_from_rgb8(const torch::Tensor& rgb_hwc) {
  return rgb_hwc.permute({2, 0, 1}).to(torch::kFloat).div(127.5).sub(1.0).contiguous();
}

torch::Tensor image_to_rgb8(const torch::Tensor& image_chw) {
  return image_chw.detach()
      .to(torch::kCPU, torch::kFloat)
      .add(1.0)
      .mul(127.5)
      .round()
      .clamp(0, 255)
      .to(torch::kUInt8)
      .permute({1, 2, 0})
      .contiguous();
}

torch::Tensor load_image(const std::filesystem::path& path) {
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw std::runtime_error("cannot decode image " + path.string());
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  auto t = torch::from_blob(rgb.data, {rgb.rows, rgb.cols, 3}, torch::kUInt8).clone();
  return image_from_rgb8(t);
}

torch::Tensor load_mask(const std::filesystem::path& path) {
  cv::Mat m = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (m.empty()) throw std::runtime_error("cannot decode mask " + path.string());
  if (m.channels() != 1) {
    throw std::invalid_argument("mask " + path.string() + " must be single-channel, has " +
                                std::to_string(m.channels()) + " channels");
  }
  if (m.depth() == CV_8U) {
    return torch::from_blob(m.data, {m.rows, m.cols}, torch::kUInt8).to(torch::kLong);
  }
  if (m.depth() == CV_16U) {
    cv::Mat wide;
    m.convertTo(wide, CV_32S);
    return torch::from_blob(wide.data, {m.rows, m.cols}, torch::kInt).to(torch::kLong);
  }
  throw std::invalid_argument("mask " + path.string() + " does not hold integer labels");
}

ImageMaskPair load_pair(const std::filesystem::path& image_path,
                        const std::filesystem::path& mask_path,
                        std::optional<Resolution> expected) {
  ImageMaskPair pair = make_pair(load_image(image_path), load_mask(mask_path));
  if (expected && (pair.height() != expected->height || pair.width() != expected->width)) {
    throw std::invalid_argument("pair resolution " +
                                to_string({pair.height(), pair.width()}) +
                                " does not match configured resolution " + to_string(*expected));
  }
  return pair;
}

ImageMaskPair fit_pair(const ImageMaskPair& pair, Resolution target) {
  if (pair.height() == target.height && pair.width() == target.width) return pair;
  namespace F = torch::nn::functional;
  auto image = F::interpolate(pair.image.unsqueeze(0),
                              F::InterpolateFuncOptions()
                                  .size(std::vector<int64_t>{target.height, target.width})
                                  .mode(torch::kBilinear)
                                  .align_corners(false))
                   .squeeze(0)
                   .clamp(-1, 1);
  auto mask = F::interpolate(pair.mask.to(torch::kFloat).unsqueeze(0).unsqueeze(0),
                             F::InterpolateFuncOptions()
                                 .size(std::vector<int64_t>{target.height, target.width})
                                 .mode(torch::kNearest))
                  .squeeze(0)
                  .squeeze(0)
                  .to(torch::kLong);
  ImageMaskPair out = make_pair(image, mask, pair.num_classes);
  out.class_names = pair.class_names;
  return out;
}

void save_image(const std::filesystem::path& path, const torch::Tensor& image_chw) {
  auto rgb = image_to_rgb8(image_chw);
  cv::Mat view(static_cast<int>(rgb.size(0)), static_cast<int>(rgb.size(1)), CV_8UC3,
               rgb.data_ptr<uint8_t>());
  cv::Mat bgr;
  cv::cvtColor(view, bgr, cv::COLOR_RGB2BGR);
  if (!cv::imwrite(path.string(), bgr)) {
    throw std::runtime_error("cannot write image " + path.string());
  }
}

void save_mask(const std::filesystem::path& path, const torch::Tensor& mask_hw) {
  auto labels = mask_hw.detach().to(torch::kCPU, torch::kLong);
  if (labels.numel() > 0 && labels.max().item<int64_t>() > 255) {
    throw std::invalid_argument("mask labels above 255 do not fit an 8-bit mask file");
  }
  auto bytes = labels.to(torch::kUInt8).contiguous();
  cv::Mat view(static_cast<int>(bytes.size(0)), static_cast<int>(bytes.size(1)), CV_8UC1,
               bytes.data_ptr<uint8_t>());
  if (!cv::imwrite(path.string(), view)) {
    throw std::runtime_error("cannot write mask " + path.string());
  }
}

void save_pair(const std::filesystem::path& image_path, const std::filesystem::path& mask_path,
               const ImageMaskPair& pair) {
  save_image(image_path, pair.image);
  save_mask(mask_path, pair.mask);
}

torch::Tensor to_one_hot(const torch::Tensor& mask, int64_t num_classes) {
  if (!is_integer_tensor(mask)) throw std::invalid_argument("to_one_hot: mask must be integer");
  if (mask.dim() != 2 && mask.dim() != 3) {
    throw std::invalid_argument("to_one_hot: mask must be (H,W) or (B,H,W)");
  }
  auto labels = mask.to(torch::kLong);
  if (labels.numel() > 0) {
    const int64_t lo = labels.min().item<int64_t>();
    const int64_t hi = labels.max().item<int64_t>();
    if (lo < 0 || hi >= num_classes) {
      throw std::invalid_argument("to_one_hot: label " + std::to_string(lo < 0 ? lo : hi) +
                                  " out of range for N=" + std::to_string(num_classes));
    }
  }
  auto one_hot = torch::one_hot(labels, num_classes).to(torch::kFloat);
  // (..., H, W, N) -> (..., N, H, W)
  return one_hot.movedim(-1, -3).contiguous();
}

torch::Tensor one_hot_to_labels(const torch::Tensor& one_hot) {
  return one_hot.detach().argmax(-3);
}

torch::Tensor subsample_nearest(const torch::Tensor& tensor, Resolution target) {
  if (tensor.dim() < 2) throw std::invalid_argument("subsample_nearest: need >= 2 dims");
  const int64_t h = tensor.size(-2);
  const int64_t w = tensor.size(-1);
  const int64_t fy = exact_power_of_two_ratio(h, target.height);
  const int64_t fx = exact_power_of_two_ratio(w, target.width);
  if (fy == 0 || fx == 0) {
    throw std::invalid_argument("cannot downsample " + to_string({h, w}) + " to " +
                                to_string(target) + ": scale is not a power of two");
  }
  using torch::indexing::Slice;
  using torch::indexing::Ellipsis;
  return tensor.index({Ellipsis, Slice(0, h, fy), Slice(0, w, fx)});
}

torch::Tensor downsample_mask(const torch::Tensor& mask, Resolution target) {
  if (!is_integer_tensor(mask)) {
    throw std::invalid_argument("downsample_mask: mask must hold integer labels");
  }
  return subsample_nearest(mask, target).contiguous();
}

}  // namespace pairgen
