#include "pairgen/discmodel.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include <ATen/CPUGeneratorImpl.h>

namespace pairgen {
namespace {

namespace F = torch::nn::functional;

constexpr double kLeakySlope = 0.2;
constexpr int64_t kSideChannels[4] = {32, 8, 16, 32};

int64_t scaled(int64_t channels, double multiplier) {
  return std::max<int64_t>(1, std::llround(static_cast<double>(channels) * multiplier));
}

torch::Tensor lrelu(const torch::Tensor& x) {
  return F::leaky_relu(x, F::LeakyReLUFuncOptions().negative_slope(kLeakySlope));
}

torch::Tensor avgpool2(const torch::Tensor& x) {
  return F::avg_pool2d(x, F::AvgPool2dFuncOptions(2));
}

torch::nn::Conv2d conv(int64_t in, int64_t out, int64_t k) {
  return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, k).padding(k / 2));
}

bool halvable(int64_t h, int64_t w) { return h % 2 == 0 && w % 2 == 0 && h >= 2 && w >= 2; }

}  // namespace

DiscriminatorPlan DiscriminatorPlan::build(const RunConfig& config, int64_t num_classes) {
  config.validate();
  if (num_classes < 2) throw std::invalid_argument("discriminator needs N >= 2 classes");
  const double m = config.channel_multiplier;
  const int64_t levels = config.n_lowlevel_blocks;

  DiscriminatorPlan plan;
  plan.num_classes = num_classes;
  plan.input = {3, config.resolution.height, config.resolution.width};
  plan.first_side_channels = scaled(kSideChannels[0], m);

  int64_t channels = plan.first_side_channels;
  int64_t h = plan.input.height;
  int64_t w = plan.input.width;
  for (int64_t k = 0; k < levels; ++k) {
    const int64_t side = (k >= 1 && k <= 3) ? scaled(kSideChannels[k], m) : 0;
    const int64_t out = scaled(std::min<int64_t>(64LL << k, 256), m);
    if (!halvable(h, w)) throw std::invalid_argument("resolution too small for n_lowlevel_blocks");
    h /= 2;
    w /= 2;
    plan.lowlevel.push_back({channels + side, side, {out, h, w}});
    channels = out;
  }
  plan.feature = {channels, h, w};

  plan.layout_maps.push_back({1, h, w});
  for (int64_t b = 0; b < 4; ++b) {
    if (halvable(h, w)) {
      h /= 2;
      w /= 2;
    }
    plan.layout_maps.push_back({1, h, w});
  }
  return plan;
}

std::string DiscriminatorPlan::describe() const {
  std::ostringstream os;
  os << "image" << to_string(input) << " -> feat_0(" << first_side_channels << ")";
  for (std::size_t k = 0; k < lowlevel.size(); ++k) {
    os << " -> down_" << k;
    if (lowlevel[k].side_channels) os << "[+feat_" << k << "(" << lowlevel[k].side_channels << ")]";
    os << to_string(lowlevel[k].output);
  }
  os << "; F" << to_string(feature) << "; object " << object_blocks << "x(" << feature.channels
     << ") -> " << num_classes + 1 << " logits; layout";
  for (const auto& s : layout_maps) os << " " << to_string(s);
  return os.str();
}

ResBlockDownImpl::ResBlockDownImpl(int64_t in_channels, int64_t out_channels, bool downsample)
    : downsample_(downsample) {
  conv1_ = register_module("conv1", conv(in_channels, out_channels, 3));
  conv2_ = register_module("conv2", conv(out_channels, out_channels, 3));
  if (in_channels != out_channels) skip_ = register_module("skip", conv(in_channels, out_channels, 1));
}

torch::Tensor ResBlockDownImpl::forward(const torch::Tensor& x) {
  auto h = conv2_(lrelu(conv1_(lrelu(x))));
  auto s = skip_ ? skip_(x) : x;
  if (downsample_) {
    h = avgpool2(h);
    s = avgpool2(s);
  }
  return h + s;
}

VectorBlockImpl::VectorBlockImpl(int64_t channels) {
  fc1_ = register_module("fc1", torch::nn::Linear(channels, channels));
  fc2_ = register_module("fc2", torch::nn::Linear(channels, channels));
}

torch::Tensor VectorBlockImpl::forward(const torch::Tensor& x) {
  return x + fc2_(lrelu(fc1_(lrelu(x))));
}

DiscriminatorImpl::DiscriminatorImpl(DiscriminatorPlan plan) : plan_(std::move(plan)) {
  side_convs_ = register_module("side_convs", torch::nn::ModuleList());
  side_convs_->push_back(conv(3, plan_.first_side_channels, 3));
  for (const auto& stage : plan_.lowlevel) {
    if (stage.side_channels) side_convs_->push_back(conv(3, stage.side_channels, 3));
  }
  lowlevel_blocks_ = register_module("lowlevel_blocks", torch::nn::ModuleList());
  lowlevel_heads_ = register_module("lowlevel_heads", torch::nn::ModuleList());
  for (const auto& stage : plan_.lowlevel) {
    lowlevel_blocks_->push_back(ResBlockDown(stage.in_channels, stage.output.channels, true));
    lowlevel_heads_->push_back(conv(stage.output.channels, 1, 1));
  }
  object_blocks_ = register_module("object_blocks", torch::nn::ModuleList());
  for (int64_t b = 0; b < plan_.object_blocks; ++b) {
    object_blocks_->push_back(VectorBlock(plan_.feature.channels));
  }
  object_out_ = register_module(
      "object_out", torch::nn::Linear(plan_.feature.channels, plan_.num_classes + 1));
  layout_squeeze_ = register_module("layout_squeeze", conv(plan_.feature.channels, 1, 1));
  layout_blocks_ = register_module("layout_blocks", torch::nn::ModuleList());
  for (std::size_t b = 1; b < plan_.layout_maps.size(); ++b) {
    const bool down = plan_.layout_maps[b].height != plan_.layout_maps[b - 1].height;
    layout_blocks_->push_back(ResBlockDown(1, 1, down));
  }
}

LowLevelOutput DiscriminatorImpl::lowlevel(const std::vector<torch::Tensor>& images) {
  if (images.size() != 4) {
    throw std::invalid_argument("low-level discriminator expects 4 image scales, got " +
                                std::to_string(images.size()));
  }
  for (std::size_t k = 0; k < images.size(); ++k) {
    const auto& im = images[k];
    if (im.dim() != 4 || im.size(1) != 3 || im.size(2) != (plan_.input.height >> k) ||
        im.size(3) != (plan_.input.width >> k)) {
      throw std::invalid_argument("image scale " + std::to_string(k) + " has the wrong shape");
    }
  }
  LowLevelOutput out;
  auto x = side_convs_[0]->as<torch::nn::Conv2d>()->forward(images[0]);
  std::size_t side = 1;
  for (std::size_t k = 0; k < plan_.lowlevel.size(); ++k) {
    if (plan_.lowlevel[k].side_channels) {
      auto feat = side_convs_[side++]->as<torch::nn::Conv2d>()->forward(images[k]);
      x = torch::cat({x, feat}, 1);
    }
    x = lowlevel_blocks_[k]->as<ResBlockDown>()->forward(x);
    out.maps.push_back(lowlevel_heads_[k]->as<torch::nn::Conv2d>()->forward(x));
  }
  out.feature = x;
  return out;
}

torch::Tensor DiscriminatorImpl::object_head(const torch::Tensor& vectors) {
  auto x = vectors;
  for (const auto& block : *object_blocks_) x = block->as<VectorBlock>()->forward(x);
  return object_out_(lrelu(x));
}

std::vector<torch::Tensor> DiscriminatorImpl::layout(const torch::Tensor& feature) {
  std::vector<torch::Tensor> maps;
  auto x = layout_squeeze_(feature);
  maps.push_back(x);
  for (const auto& block : *layout_blocks_) {
    x = block->as<ResBlockDown>()->forward(x);
    maps.push_back(x);
  }
  return maps;
}

LowLevelOutput lowlevel_features(Discriminator& disc, const std::vector<torch::Tensor>& images) {
  return disc->lowlevel(images);
}

ContentVectorSet mca(const torch::Tensor& feature, const torch::Tensor& mask) {
  if (feature.dim() != 4 || mask.dim() != 4) {
    throw std::invalid_argument("mca: expected F (B,C,h,w) and mask (B,N,h,w)");
  }
  if (feature.size(0) != mask.size(0) || feature.size(2) != mask.size(2) ||
      feature.size(3) != mask.size(3)) {
    throw std::invalid_argument("mca: feature grid " + std::to_string(feature.size(2)) + "x" +
                                std::to_string(feature.size(3)) + " does not match mask grid " +
                                std::to_string(mask.size(2)) + "x" + std::to_string(mask.size(3)));
  }
  const auto m = mask.to(feature.scalar_type());
  ContentVectorSet out;
  out.areas = m.sum({2, 3});                                    // (B,N)
  auto sums = torch::einsum("bnhw,bchw->bnc", {m, feature});     // (B,N,C)
  out.present = out.areas.detach() > 0;
  // Absent regions divide by 1 and stay zero.
  auto denom = torch::where(out.present, out.areas, torch::ones_like(out.areas));
  out.vectors = sums / denom.unsqueeze(-1);
  return out;
}

ContentVectorSet mca_from_labels(const torch::Tensor& feature, const torch::Tensor& labels,
                                 int64_t num_classes) {
  if (labels.dim() != 3) throw std::invalid_argument("mca: labels must be (B,h,w)");
  if (labels.numel() > 0 && labels.max().item<int64_t>() >= num_classes) {
    throw std::invalid_argument("mca: label out of range");
  }
  auto one_hot = torch::one_hot(labels.to(torch::kLong), num_classes).movedim(-1, 1);
  return mca(feature, one_hot.to(feature.scalar_type()));
}

torch::Tensor balancing_weights(const torch::Tensor& labels, int64_t num_classes) {
  if (labels.dim() != 2 && labels.dim() != 3) {
    throw std::invalid_argument("balancing_weights: labels must be (h,w) or (B,h,w)");
  }
  const bool batched = labels.dim() == 3;
  auto l = batched ? labels : labels.unsqueeze(0);
  const int64_t batch = l.size(0);
  auto alpha = torch::zeros({batch, num_classes}, torch::kDouble);
  auto acc = alpha.accessor<double, 2>();
  for (int64_t b = 0; b < batch; ++b) {
    auto counts = torch::bincount(l[b].reshape({-1}).to(torch::kLong), {}, num_classes)
                      .to(torch::kDouble);
    auto c = counts.accessor<double, 1>();
    double total = 0;
    for (int64_t i = 0; i < num_classes; ++i) {
      if (c[i] > 0) total += 1.0 / c[i];
    }
    for (int64_t i = 0; i < num_classes; ++i) {
      acc[b][i] = c[i] > 0 ? (1.0 / c[i]) / total : 0.0;
    }
  }
  return batched ? alpha : alpha.squeeze(0);
}

ObjectLogits object_logits(Discriminator& disc, const ContentVectorSet& vectors) {
  auto idx = vectors.present.nonzero();  // (M, 2): [sample, identity]
  ObjectLogits out;
  out.batch_size = vectors.vectors.size(0);
  out.sample = idx.select(1, 0);
  out.identity = idx.select(1, 1);
  auto rows = vectors.vectors.index({out.sample, out.identity});  // (M, C)
  out.logits = rows.size(0) > 0
                   ? disc->object_head(rows)
                   : torch::zeros({0, disc->plan().num_classes + 1}, vectors.vectors.options());
  return out;
}

std::vector<torch::Tensor> layout_logits(Discriminator& disc, const torch::Tensor& feature) {
  return disc->layout(feature);
}

void init_parameters(Discriminator& disc, uint64_t seed) {
  torch::NoGradGuard no_grad;
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  const double gain = std::sqrt(2.0 / (1.0 + kLeakySlope * kLeakySlope));
  for (auto& p : disc->named_parameters()) {
    auto& t = p.value();
    if (t.dim() < 2) {
      t.zero_();
      continue;
    }
    int64_t fan_in = 1;
    for (int64_t d = 1; d < t.dim(); ++d) fan_in *= t.size(d);
    const double bound = gain * std::sqrt(3.0 / static_cast<double>(fan_in));
    t.copy_(torch::rand(t.sizes(), gen, t.options()).mul(2.0 * bound).sub(bound));
  }
}

}  // namespace pairgen
