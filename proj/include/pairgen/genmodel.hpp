#pragma once

#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "pairgen/config.hpp"

namespace pairgen {

enum class MaskMode { kBernoulli, kHard };

std::string to_string(MaskMode mode);

// Bernoulli before p0, hard from p0 on.
MaskMode mask_mode_for_epoch(int64_t epoch, int64_t p0_epochs);

struct TensorShape {
  int64_t channels = 0;
  int64_t height = 0;
  int64_t width = 0;

  bool operator==(const TensorShape&) const = default;
};

std::string to_string(const TensorShape& s);

struct UpStage {
  int64_t in_channels = 0;
  TensorShape output;
  bool upsample = false;
};

// Layer plan of the generator: a transposed convolution lifts z to the base
// grid, then one residual block per stage (the first keeps the grid, every
// other doubles it). The last four stages feed tanh image heads and the
// last one also feeds the mask head.
struct GeneratorPlan {
  int64_t latent_dim = 0;
  int64_t num_classes = 0;
  TensorShape base;               // after the transposed convolution
  std::vector<UpStage> stages;
  std::vector<int64_t> image_head_stages;  // finest first

  static GeneratorPlan build(const RunConfig& config, int64_t num_classes);

  // Image shapes, finest first.
  std::vector<TensorShape> image_shapes() const;
  std::string describe() const;
};

struct SynthesisOutput {
  std::vector<torch::Tensor> images;  // (B,3,h,w), finest first
  torch::Tensor soft_mask;            // (B,N,H,W), softmax over N
  torch::Tensor hard_mask;            // (B,N,H,W), straight-through
};

// Straight-through argmax over dim -3. The forward value is the discrete
// map T(y) (one-hot argmax in hard mode, independent per-channel Bernoulli
// draws otherwise); the backward pass treats the map as the identity on y.
// Ties go to the lowest channel.
torch::Tensor mask_argmax(const torch::Tensor& soft_mask, MaskMode mode,
                          std::optional<at::Generator> generator = std::nullopt);

class ResBlockUpImpl : public torch::nn::Module {
 public:
  ResBlockUpImpl(int64_t in_channels, int64_t out_channels, bool upsample);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  bool upsample_;
  torch::nn::InstanceNorm2d norm1_{nullptr}, norm2_{nullptr};
  torch::nn::Conv2d conv1_{nullptr}, conv2_{nullptr}, skip_{nullptr};
};
TORCH_MODULE(ResBlockUp);

class GeneratorImpl : public torch::nn::Module {
 public:
  explicit GeneratorImpl(GeneratorPlan plan);

  SynthesisOutput forward(const torch::Tensor& z, MaskMode mode,
                          std::optional<at::Generator> generator = std::nullopt);

  const GeneratorPlan& plan() const { return plan_; }

 private:
  GeneratorPlan plan_;
  torch::nn::ConvTranspose2d lift_{nullptr};
  torch::nn::ModuleList blocks_;
  torch::nn::ModuleList image_heads_;
  torch::nn::Conv2d mask_head_{nullptr};
};
TORCH_MODULE(Generator);

// Rejects a latent of the wrong width before running the network.
SynthesisOutput generate(Generator& generator, const torch::Tensor& z, MaskMode mode,
                         std::optional<at::Generator> rng = std::nullopt);

// Reproducible initialisation from `seed`. Weights use a scaled uniform
// fan-in rule; biases start at zero; the mask head starts near zero so the
// initial soft mask is close to uniform.
void init_parameters(Generator& generator, uint64_t seed);

// Deep copy of parameters and buffers between two modules of the same plan.
void copy_parameters(torch::nn::Module& dst, const torch::nn::Module& src);

// Normalisation used inside generator blocks; recorded in checkpoints.
inline constexpr const char* kGeneratorNorm = "instance_norm_affine";

}  // namespace pairgen
