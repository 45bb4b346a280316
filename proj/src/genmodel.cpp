#include "pairgen/genmodel.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include <ATen/CPUGeneratorImpl.h>

namespace pairgen {
namespace {

namespace F = torch::nn::functional;

constexpr double kLeakySlope = 0.2;

int64_t scaled(int64_t channels, double multiplier) {
  return std::max<int64_t>(1, std::llround(static_cast<double>(channels) * multiplier));
}

torch::Tensor lrelu(const torch::Tensor& x) {
  return F::leaky_relu(x, F::LeakyReLUFuncOptions().negative_slope(kLeakySlope));
}

torch::Tensor upsample2(const torch::Tensor& x) {
  return F::interpolate(x, F::InterpolateFuncOptions()
                               .scale_factor(std::vector<double>{2.0, 2.0})
                               .mode(torch::kNearest));
}

torch::nn::Conv2d conv(int64_t in, int64_t out, int64_t k) {
  return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, k).padding(k / 2));
}

}  // namespace

std::string to_string(MaskMode mode) {
  return mode == MaskMode::kHard ? "hard" : "bernoulli";
}

MaskMode mask_mode_for_epoch(int64_t epoch, int64_t p0_epochs) {
  return epoch < p0_epochs ? MaskMode::kBernoulli : MaskMode::kHard;
}

std::string to_string(const TensorShape& s) {
  return "(" + std::to_string(s.channels) + "," + std::to_string(s.height) + "," +
         std::to_string(s.width) + ")";
}

GeneratorPlan GeneratorPlan::build(const RunConfig& config, int64_t num_classes) {
  config.validate();
  if (num_classes < 2) throw std::invalid_argument("generator needs N >= 2 classes");
  const double m = config.channel_multiplier;
  const int64_t n_stages = config.upsampling_stages() + 1;

  GeneratorPlan plan;
  plan.latent_dim = config.latent_dim;
  plan.num_classes = num_classes;
  plan.base = {scaled(256, m), config.base_grid.height, config.base_grid.width};

  int64_t in = plan.base.channels;
  int64_t h = plan.base.height;
  int64_t w = plan.base.width;
  for (int64_t i = 0; i < n_stages; ++i) {
    int64_t out = scaled(256, m);
    if (i == n_stages - 2) out = scaled(128, m);
    if (i == n_stages - 1) out = scaled(64, m);
    const bool up = i > 0;
    if (up) {
      h *= 2;
      w *= 2;
    }
    plan.stages.push_back({in, {out, h, w}, up});
    in = out;
  }
  for (int64_t i = 0; i < 4; ++i) plan.image_head_stages.push_back(n_stages - 1 - i);
  return plan;
}

std::vector<TensorShape> GeneratorPlan::image_shapes() const {
  std::vector<TensorShape> out;
  for (int64_t s : image_head_stages) {
    out.push_back({3, stages[s].output.height, stages[s].output.width});
  }
  return out;
}

std::string GeneratorPlan::describe() const {
  std::ostringstream os;
  os << "z(" << latent_dim << ",1,1) -> up_0" << to_string(base);
  for (std::size_t i = 0; i < stages.size(); ++i) {
    os << " -> up_" << i + 1 << to_string(stages[i].output);
  }
  os << "; images";
  for (const auto& s : image_shapes()) os << " " << to_string(s);
  os << "; mask (" << num_classes << "," << stages.back().output.height << ","
     << stages.back().output.width << ")";
  return os.str();
}

torch::Tensor mask_argmax(const torch::Tensor& soft_mask, MaskMode mode,
                          std::optional<at::Generator> generator) {
  if (soft_mask.dim() < 3) throw std::invalid_argument("mask_argmax: need (...,N,H,W)");
  {
    torch::NoGradGuard no_grad;
    const double lo = soft_mask.min().item<double>();
    const double hi = soft_mask.max().item<double>();
    if (!(lo >= 0.0 && hi <= 1.0)) {
      throw std::invalid_argument("mask_argmax: probabilities outside [0,1]");
    }
  }
  const auto y = soft_mask.detach();
  torch::Tensor discrete;
  if (mode == MaskMode::kHard) {
    discrete = torch::one_hot(y.argmax(-3), y.size(-3)).movedim(-1, -3).to(y.scalar_type());
  } else {
    discrete = torch::bernoulli(y, generator);
  }
  // Forward value is exactly T(y); the zero-valued term carries dL/dy.
  return discrete + (soft_mask - y);
}

ResBlockUpImpl::ResBlockUpImpl(int64_t in_channels, int64_t out_channels, bool upsample)
    : upsample_(upsample) {
  norm1_ = register_module(
      "norm1", torch::nn::InstanceNorm2d(torch::nn::InstanceNorm2dOptions(in_channels).affine(true)));
  conv1_ = register_module("conv1", conv(in_channels, out_channels, 3));
  norm2_ = register_module(
      "norm2", torch::nn::InstanceNorm2d(torch::nn::InstanceNorm2dOptions(out_channels).affine(true)));
  conv2_ = register_module("conv2", conv(out_channels, out_channels, 3));
  if (in_channels != out_channels) skip_ = register_module("skip", conv(in_channels, out_channels, 1));
}

torch::Tensor ResBlockUpImpl::forward(const torch::Tensor& x) {
  auto h = lrelu(norm1_(x));
  auto s = x;
  if (upsample_) {
    h = upsample2(h);
    s = upsample2(s);
  }
  h = conv1_(h);
  h = conv2_(lrelu(norm2_(h)));
  if (skip_) s = skip_(s);
  return h + s;
}

GeneratorImpl::GeneratorImpl(GeneratorPlan plan) : plan_(std::move(plan)) {
  lift_ = register_module(
      "lift", torch::nn::ConvTranspose2d(torch::nn::ConvTranspose2dOptions(
                  plan_.latent_dim, plan_.base.channels, {plan_.base.height, plan_.base.width})));
  blocks_ = register_module("blocks", torch::nn::ModuleList());
  for (const auto& stage : plan_.stages) {
    blocks_->push_back(ResBlockUp(stage.in_channels, stage.output.channels, stage.upsample));
  }
  image_heads_ = register_module("image_heads", torch::nn::ModuleList());
  for (int64_t s : plan_.image_head_stages) {
    image_heads_->push_back(conv(plan_.stages[s].output.channels, 3, 3));
  }
  mask_head_ = register_module("mask_head",
                               conv(plan_.stages.back().output.channels, plan_.num_classes, 3));
}

SynthesisOutput GeneratorImpl::forward(const torch::Tensor& z, MaskMode mode,
                                       std::optional<at::Generator> generator) {
  const int64_t batch = z.size(0);
  auto x = lift_(z.reshape({batch, plan_.latent_dim, 1, 1}));

  const auto n_stages = static_cast<int64_t>(plan_.stages.size());
  std::vector<torch::Tensor> images(4);
  for (int64_t i = 0; i < n_stages; ++i) {
    x = blocks_[i]->as<ResBlockUp>()->forward(x);
    for (std::size_t k = 0; k < plan_.image_head_stages.size(); ++k) {
      if (plan_.image_head_stages[k] == i) {
        images[k] = torch::tanh(image_heads_[k]->as<torch::nn::Conv2d>()->forward(lrelu(x)));
      }
    }
  }

  SynthesisOutput out;
  out.images = std::move(images);
  out.soft_mask = torch::softmax(mask_head_(lrelu(x)), 1);
  out.hard_mask = mask_argmax(out.soft_mask, mode, generator);
  return out;
}

SynthesisOutput generate(Generator& generator, const torch::Tensor& z, MaskMode mode,
                         std::optional<at::Generator> rng) {
  const int64_t expected = generator->plan().latent_dim;
  if (z.dim() != 2 && z.dim() != 4) {
    throw std::invalid_argument("latent must be (B,L) or (B,L,1,1)");
  }
  if (z.size(1) != expected) {
    throw std::invalid_argument("latent_dim mismatch: got " + std::to_string(z.size(1)) +
                                ", expected " + std::to_string(expected));
  }
  return generator->forward(z, mode, rng);
}

void init_parameters(Generator& generator, uint64_t seed) {
  torch::NoGradGuard no_grad;
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  const double gain = std::sqrt(2.0 / (1.0 + kLeakySlope * kLeakySlope));
  for (auto& p : generator->named_parameters()) {
    auto& t = p.value();
    const std::string& name = p.key();
    if (t.dim() < 2) {
      const bool norm_scale =
          name.find("norm") != std::string::npos && name.ends_with("weight");
      t.fill_(norm_scale ? 1.0 : 0.0);
      continue;
    }
    // ConvTranspose2d stores (in, out, kh, kw); everything else (out, in, ...).
    const bool transposed = name.starts_with("lift");
    int64_t fan_in = transposed ? t.size(0) : t.size(1);
    for (int64_t d = 2; d < t.dim(); ++d) {
      if (!transposed) fan_in *= t.size(d);
    }
    double bound = gain * std::sqrt(3.0 / static_cast<double>(fan_in));
    if (name.starts_with("mask_head")) bound *= 0.1;
    t.copy_(torch::rand(t.sizes(), gen, t.options()).mul(2.0 * bound).sub(bound));
  }
}

void copy_parameters(torch::nn::Module& dst, const torch::nn::Module& src) {
  torch::NoGradGuard no_grad;
  auto dst_params = dst.parameters();
  auto src_params = src.parameters();
  if (dst_params.size() != src_params.size()) {
    throw std::invalid_argument("copy_parameters: parameter count mismatch");
  }
  for (std::size_t i = 0; i < dst_params.size(); ++i) dst_params[i].copy_(src_params[i]);
  auto dst_buffers = dst.buffers();
  auto src_buffers = src.buffers();
  for (std::size_t i = 0; i < dst_buffers.size() && i < src_buffers.size(); ++i) {
    dst_buffers[i].copy_(src_buffers[i]);
  }
}

}  // namespace pairgen
