#pragma once

#include <filesystem>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "pairgen/augment.hpp"
#include "pairgen/checkpoint.hpp"
#include "pairgen/config.hpp"
#include "pairgen/data.hpp"
#include "pairgen/discmodel.hpp"
#include "pairgen/genmodel.hpp"
#include "pairgen/losses.hpp"
#include "pairgen/rng.hpp"

namespace pairgen {

struct LossReport {
  int64_t epoch = 0;
  MaskMode mode = MaskMode::kBernoulli;
  double d_object = 0, d_layout = 0, d_lowlevel = 0, d_total = 0;
  double g_object = 0, g_layout = 0, g_lowlevel = 0, g_total = 0;

  static std::string tsv_header();
  std::string to_tsv() const;
};

struct TrainingSchedule {
  int64_t p0 = 0;
  int64_t total = 0;
  double ema_decay = 0.9999;

  static TrainingSchedule from_config(const RunConfig& config);
  MaskMode mode(int64_t epoch) const { return mask_mode_for_epoch(epoch, p0); }
};

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(const std::string& what, double last_loss)
      : std::runtime_error(what), last_loss_(last_loss) {}
  double last_loss() const { return last_loss_; }

 private:
  double last_loss_;
};

// shadow <- decay * shadow + (1 - decay) * model, parameter by parameter;
// buffers are copied.
void ema_update(torch::nn::Module& shadow, const torch::nn::Module& model, double decay);

// Multi-scale view of a full-resolution batch: full, 1/2, 1/4, 1/8 by
// average pooling.
std::vector<torch::Tensor> image_pyramid(const torch::Tensor& full);

struct DiscriminatorLosses {
  torch::Tensor object, layout, lowlevel, total;
};

// One augmented real batch and one augmented, detached fake batch.
struct FrozenBatch {
  AugmentedBatch real;
  AugmentedBatch fake;
};

class Trainer {
 public:
  Trainer(ImageMaskPair pair, RunConfig config);

  // Runs one epoch: a discriminator step followed by a generator step and
  // an EMA update. Throws TrainingDiverged on a non-finite loss, before any
  // parameter is touched by that step.
  LossReport step();

  int64_t epoch() const { return epoch_; }
  const RunConfig& config() const { return config_; }
  const ImageMaskPair& pair() const { return pair_; }
  Generator& generator() { return generator_; }
  Generator& ema_generator() { return ema_; }
  Discriminator& discriminator() { return disc_; }
  const LossCounters& counters() const { return counters_; }

  Checkpoint checkpoint() const;

  // Discriminator-only helpers on a fixed batch (no feature augmentation).
  FrozenBatch sample_batch();
  DiscriminatorLosses discriminator_losses(const FrozenBatch& batch);
  void discriminator_step(const FrozenBatch& batch);

 private:
  struct Heads {
    std::vector<torch::Tensor> lowlevel;
    std::vector<torch::Tensor> layout;
    ObjectLogits object;
    torch::Tensor labels;  // (B,h,w) on F's grid
  };

  Heads run_discriminator(const AugmentedBatch& batch, bool feature_augmentation);
  DiscriminatorLosses d_losses(const Heads& real, const Heads& fake);
  void set_discriminator_trainable(bool on);

  ImageMaskPair pair_;
  RunConfig config_;
  TrainingSchedule schedule_;
  AugmentationPolicy policy_;
  Rng rng_;
  Generator generator_{nullptr};
  Generator ema_{nullptr};
  Discriminator disc_{nullptr};
  std::unique_ptr<torch::optim::Adam> g_opt_;
  std::unique_ptr<torch::optim::Adam> d_opt_;
  std::vector<torch::Tensor> real_pyramid_;
  torch::Tensor real_masks_;
  LossCounters counters_;
  int64_t epoch_ = 0;
};

// Rebuilds a generator from a checkpoint; `ema` selects the shadow weights.
// Throws std::runtime_error when the stored plan differs from the plan the
// stored config produces.
Generator load_generator(const Checkpoint& checkpoint, bool ema = true);

struct TrainOptions {
  std::filesystem::path out_dir;
  std::function<void(const LossReport&)> on_report;
};

// Full loop: writes out_dir/losses.tsv (one row per epoch) and
// out_dir/checkpoints/epoch_XXXXXXX.ckpt every checkpoint_every epochs and
// at the end.
std::vector<LossReport> train(const ImageMaskPair& pair, const RunConfig& config,
                              const TrainOptions& options);

std::filesystem::path checkpoint_path(const std::filesystem::path& out_dir, int64_t epoch);

}  // namespace pairgen
