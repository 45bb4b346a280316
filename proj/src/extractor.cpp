#include "pairgen/extractor.hpp"

#include <cmath>
#include <cstdlib>

#include <ATen/CPUGeneratorImpl.h>

#include "pairgen/checkpoint.hpp"

namespace pairgen {
namespace {

namespace F = torch::nn::functional;
namespace nn = torch::nn;

nn::Conv2d conv(int64_t in, int64_t out, int64_t k, int64_t stride = 1) {
  return nn::Conv2d(nn::Conv2dOptions(in, out, k).stride(stride).padding(k / 2));
}

torch::Tensor max_pool(const torch::Tensor& x) {
  return F::max_pool2d(x, F::MaxPool2dFuncOptions(3).stride(2).padding(1));
}

void seeded_init(nn::Module& module, uint64_t seed) {
  torch::NoGradGuard no_grad;
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  for (auto& item : module.named_parameters()) {
    auto& p = item.value();
    if (p.dim() == 1) {
      p.zero_();
      continue;
    }
    const double fan_in = static_cast<double>(p.numel() / p.size(0));
    p.normal_(0.0, std::sqrt(2.0 / fan_in), gen);
  }
}

std::string builtin_hash(const nn::Module& module) {
  std::string bytes;
  for (const auto& item : module.named_parameters()) {
    auto t = item.value().detach().contiguous();
    bytes += item.key();
    bytes.append(static_cast<const char*>(t.data_ptr()), t.numel() * t.element_size());
  }
  return sha256_bytes(bytes);
}

}  // namespace

MixedBlockImpl::MixedBlockImpl(int64_t in, int64_t b1, int64_t b2_mid, int64_t b2, int64_t b3_mid,
                               int64_t b3, int64_t pool_proj, int64_t stride)
    : stride_(stride), out_(b1 + b2 + b3 + pool_proj) {
  b1_ = register_module("b1", conv(in, b1, 1, stride));
  b2a_ = register_module("b2a", conv(in, b2_mid, 1));
  b2b_ = register_module("b2b", conv(b2_mid, b2, 3, stride));
  b3a_ = register_module("b3a", conv(in, b3_mid, 1));
  b3b_ = register_module("b3b", conv(b3_mid, b3, 3));
  b3c_ = register_module("b3c", conv(b3, b3, 3, stride));
  pool_ = register_module("pool", conv(in, pool_proj, 1));
}

torch::Tensor MixedBlockImpl::forward(const torch::Tensor& x) {
  auto y1 = torch::relu(b1_(x));
  auto y2 = torch::relu(b2b_(torch::relu(b2a_(x))));
  auto y3 = torch::relu(b3c_(torch::relu(b3b_(torch::relu(b3a_(x))))));
  auto p = F::avg_pool2d(x, F::AvgPool2dFuncOptions(3).stride(stride_).padding(1)
                                .count_include_pad(false));
  auto y4 = torch::relu(pool_(p));
  return torch::cat({y1, y2, y3, y4}, 1);
}

ExtractorNetImpl::ExtractorNetImpl() {
  stem1_ = register_module("stem1", conv(3, 32, 3, 2));
  stem2_ = register_module("stem2", conv(32, 32, 3));
  conv3_ = register_module("conv3", conv(32, 48, 1));
  conv4_ = register_module("conv4", conv(48, 64, 3));
  mixed_a_ = register_module("mixed_a", MixedBlock(64, 32, 32, 48, 16, 24, 24, 1));
  mixed_b_ = register_module("mixed_b", MixedBlock(128, 48, 48, 64, 24, 48, 32, 2));
}

std::array<torch::Tensor, 4> ExtractorNetImpl::forward(const torch::Tensor& x) {
  auto h = torch::relu(stem2_(torch::relu(stem1_(x))));
  auto t1 = max_pool(h);
  h = torch::relu(conv4_(torch::relu(conv3_(t1))));
  auto t2 = max_pool(h);
  auto t3 = mixed_a_(t2);
  auto t4 = mixed_b_(t3);
  return {t1, t2, t3, t4};
}

FeatureExtractor::FeatureExtractor(std::optional<std::filesystem::path> weights) {
  net_ = ExtractorNet();
  if (weights) {
    auto ck = load_checkpoint(*weights);
    restore_module(ck, "extractor", *net_);
    info_.weights_source = weights->string();
    info_.weights_sha256 = sha256_file(*weights);
  } else {
    seeded_init(*net_, kExtractorSeed);
    info_.weights_source = "builtin-seeded";
    info_.weights_sha256 = builtin_hash(*net_);
  }
  net_->eval();
  for (auto& p : net_->parameters()) p.set_requires_grad(false);
}

FeatureExtractor& FeatureExtractor::shared() {
  static FeatureExtractor instance = [] {
    const char* env = std::getenv(kExtractorWeightsEnv);
    if (env && *env) return FeatureExtractor(std::filesystem::path(env));
    return FeatureExtractor();
  }();
  return instance;
}

std::array<torch::Tensor, 4> FeatureExtractor::taps(const torch::Tensor& image) {
  torch::NoGradGuard no_grad;
  auto x = image.dim() == 3 ? image.unsqueeze(0) : image;
  if (x.dim() != 4 || x.size(1) != 3) {
    throw std::invalid_argument("extractor expects (3,H,W) or (B,3,H,W) images");
  }
  x = x.to(torch::kFloat32);
  if (x.size(2) != info_.input.height || x.size(3) != info_.input.width) {
    x = F::interpolate(x, F::InterpolateFuncOptions()
                              .size(std::vector<int64_t>{info_.input.height, info_.input.width})
                              .mode(torch::kBilinear)
                              .align_corners(false));
  }
  return net_->forward(x);
}

torch::Tensor FeatureExtractor::patch_features(const torch::Tensor& image, int layer) {
  if (layer < 1 || layer > 4) throw std::invalid_argument("tap layer must be in 1..4");
  if (image.dim() != 3) throw std::invalid_argument("patch_features expects one (3,H,W) image");
  auto t = taps(image)[layer - 1][0];  // (C,h,w)
  return t.flatten(1).transpose(0, 1).contiguous();
}

void FeatureExtractor::save_weights(const std::filesystem::path& path) const {
  Checkpoint ck;
  ck.metadata["kind"] = "extractor";
  store_module(ck, "extractor", *net_);
  save_checkpoint(path, ck);
}

}  // namespace pairgen
