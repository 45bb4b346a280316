#include "pairgen/training.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

namespace pairgen {
namespace {

namespace F = torch::nn::functional;

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

double value_of(const torch::Tensor& t) { return t.detach().item<double>(); }

void check_finite(const char* what, const torch::Tensor& loss, int64_t epoch) {
  const double v = value_of(loss);
  if (!std::isfinite(v)) {
    throw TrainingDiverged(std::string("non-finite ") + what + " at epoch " +
                               std::to_string(epoch),
                           v);
  }
}

}  // namespace

std::string LossReport::tsv_header() {
  return "epoch\tmode\td_object\td_layout\td_lowlevel\td_total\tg_object\tg_layout\tg_lowlevel\t"
         "g_total";
}

std::string LossReport::to_tsv() const {
  return std::to_string(epoch) + "\t" + to_string(mode) + "\t" + fmt(d_object) + "\t" +
         fmt(d_layout) + "\t" + fmt(d_lowlevel) + "\t" + fmt(d_total) + "\t" + fmt(g_object) +
         "\t" + fmt(g_layout) + "\t" + fmt(g_lowlevel) + "\t" + fmt(g_total);
}

TrainingSchedule TrainingSchedule::from_config(const RunConfig& config) {
  return {config.p0_epochs, config.total_epochs, config.ema_decay};
}

void ema_update(torch::nn::Module& shadow, const torch::nn::Module& model, double decay) {
  torch::NoGradGuard no_grad;
  auto s = shadow.parameters();
  auto m = model.parameters();
  if (s.size() != m.size()) throw std::invalid_argument("ema_update: parameter count mismatch");
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!s[i].sizes().equals(m[i].sizes()))
      throw std::invalid_argument("ema_update: parameter shape mismatch");
  }
  for (std::size_t i = 0; i < s.size(); ++i) {
    s[i].mul_(decay).add_(m[i].detach(), 1.0 - decay);
  }
  auto sb = shadow.buffers();
  auto mb = model.buffers();
  for (std::size_t i = 0; i < sb.size() && i < mb.size(); ++i) sb[i].copy_(mb[i]);
}

std::vector<torch::Tensor> image_pyramid(const torch::Tensor& full) {
  std::vector<torch::Tensor> out{full};
  for (int k = 1; k < 4; ++k) {
    out.push_back(F::avg_pool2d(full, F::AvgPool2dFuncOptions(1 << k)));
  }
  return out;
}

Trainer::Trainer(ImageMaskPair pair, RunConfig config)
    : pair_(std::move(pair)),
      config_(std::move(config)),
      schedule_(TrainingSchedule::from_config(config_)),
      policy_(AugmentationPolicy::from_config(config_)),
      rng_(config_.seed) {
  config_.validate();
  if (pair_.height() != config_.resolution.height || pair_.width() != config_.resolution.width) {
    throw std::invalid_argument("training pair is " + to_string(Resolution{pair_.height(), pair_.width()}) +
                                " but config resolution is " + to_string(config_.resolution));
  }
  const int64_t n = pair_.num_classes;
  const auto gplan = GeneratorPlan::build(config_, n);
  generator_ = Generator(gplan);
  ema_ = Generator(gplan);
  disc_ = Discriminator(DiscriminatorPlan::build(config_, n));

  const uint64_t g_seed = rng_.next_seed();
  const uint64_t d_seed = rng_.next_seed();
  init_parameters(generator_, g_seed);
  init_parameters(disc_, d_seed);
  copy_parameters(*ema_, *generator_);
  for (auto& p : ema_->parameters()) p.set_requires_grad(false);

  const auto adam = torch::optim::AdamOptions(config_.learning_rate)
                        .betas({config_.beta1, config_.beta2});
  g_opt_ = std::make_unique<torch::optim::Adam>(generator_->parameters(), adam);
  d_opt_ = std::make_unique<torch::optim::Adam>(disc_->parameters(), adam);

  const int64_t b = config_.batch_size;
  auto full = pair_.image.unsqueeze(0).expand({b, 3, pair_.height(), pair_.width()}).contiguous();
  real_pyramid_ = image_pyramid(full);
  real_masks_ = to_one_hot(pair_.mask, n).unsqueeze(0).expand({b, n, pair_.height(), pair_.width()})
                    .contiguous();
}

void Trainer::set_discriminator_trainable(bool on) {
  for (auto& p : disc_->parameters()) p.set_requires_grad(on);
}

Trainer::Heads Trainer::run_discriminator(const AugmentedBatch& batch, bool feature_augmentation) {
  Heads heads;
  auto low = disc_->lowlevel(batch.images);
  heads.lowlevel = std::move(low.maps);
  auto mask_f = subsample_nearest(batch.masks, disc_->plan().feature_resolution());
  heads.labels = one_hot_to_labels(mask_f);
  auto vectors = mca(low.feature, mask_f);
  auto layout_in = low.feature;
  if (feature_augmentation) {
    vectors = content_fa(vectors, policy_.fa_probability, rng_);
    layout_in = layout_fa(low.feature, heads.labels, pair_.num_classes, policy_.fa_probability, rng_);
  }
  heads.object = object_logits(disc_, vectors);
  heads.layout = disc_->layout(layout_in);
  return heads;
}

DiscriminatorLosses Trainer::d_losses(const Heads& real, const Heads& fake) {
  DiscriminatorLosses l;
  const auto alpha = balancing_weights(real.labels, pair_.num_classes);
  l.object = d_object_loss(real.object, fake.object, alpha, config_.object_fake_term, &counters_);
  l.layout = binary_multilayer_loss(real.layout, Target::kReal, Side::kDiscriminator) +
             binary_multilayer_loss(fake.layout, Target::kFake, Side::kDiscriminator);
  l.lowlevel = binary_multilayer_loss(real.lowlevel, Target::kReal, Side::kDiscriminator) +
               binary_multilayer_loss(fake.lowlevel, Target::kFake, Side::kDiscriminator);
  l.total = l.object + l.layout + 2.0 * l.lowlevel;
  return l;
}

LossReport Trainer::step() {
  LossReport report;
  report.epoch = epoch_;
  report.mode = schedule_.mode(epoch_);

  auto real = augment_batch(real_pyramid_, real_masks_, policy_, rng_);
  auto z = torch::randn({config_.batch_size, config_.latent_dim}, rng_.generator());
  auto fake_out = generator_->forward(z, report.mode, rng_.generator());
  auto fake = augment_batch(fake_out.images, fake_out.hard_mask, policy_, rng_);

  // Discriminator step on detached fakes.
  set_discriminator_trainable(true);
  AugmentedBatch fake_detached;
  for (const auto& im : fake.images) fake_detached.images.push_back(im.detach());
  fake_detached.masks = fake.masks.detach();
  {
    auto real_heads = run_discriminator(real, true);
    auto fake_heads = run_discriminator(fake_detached, true);
    auto d = d_losses(real_heads, fake_heads);
    check_finite("discriminator loss", d.total, epoch_);
    d_opt_->zero_grad();
    d.total.backward();
    d_opt_->step();
    report.d_object = value_of(d.object);
    report.d_layout = value_of(d.layout);
    report.d_lowlevel = value_of(d.lowlevel);
    report.d_total = value_of(d.total);
  }

  // Generator step through the updated, frozen discriminator.
  set_discriminator_trainable(false);
  {
    auto heads = run_discriminator(fake, false);
    auto g_object = g_object_loss(heads.object, &counters_);
    auto g_layout = binary_multilayer_loss(heads.layout, Target::kReal, Side::kGenerator);
    auto g_lowlevel = binary_multilayer_loss(heads.lowlevel, Target::kReal, Side::kGenerator);
    auto g_total = g_object + g_layout + 2.0 * g_lowlevel;
    check_finite("generator loss", g_total, epoch_);
    g_opt_->zero_grad();
    g_total.backward();
    g_opt_->step();
    report.g_object = value_of(g_object);
    report.g_layout = value_of(g_layout);
    report.g_lowlevel = value_of(g_lowlevel);
    report.g_total = value_of(g_total);
  }
  set_discriminator_trainable(true);

  ema_update(*ema_, *generator_, schedule_.ema_decay);
  ++epoch_;
  return report;
}

FrozenBatch Trainer::sample_batch() {
  torch::NoGradGuard no_grad;
  FrozenBatch batch;
  batch.real = augment_batch(real_pyramid_, real_masks_, policy_, rng_);
  auto z = torch::randn({config_.batch_size, config_.latent_dim}, rng_.generator());
  auto out = generator_->forward(z, schedule_.mode(epoch_), rng_.generator());
  batch.fake = augment_batch(out.images, out.hard_mask, policy_, rng_);
  return batch;
}

DiscriminatorLosses Trainer::discriminator_losses(const FrozenBatch& batch) {
  auto real = run_discriminator(batch.real, false);
  auto fake = run_discriminator(batch.fake, false);
  return d_losses(real, fake);
}

void Trainer::discriminator_step(const FrozenBatch& batch) {
  auto d = discriminator_losses(batch);
  d_opt_->zero_grad();
  d.total.backward();
  d_opt_->step();
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint ck;
  ck.config = config_;
  ck.epoch = epoch_;
  ck.metadata["num_classes"] = std::to_string(pair_.num_classes);
  ck.metadata["generator_plan"] = generator_->plan().describe();
  ck.metadata["discriminator_plan"] = disc_->plan().describe();
  ck.metadata["generator_norm"] = kGeneratorNorm;
  store_module(ck, "generator", *generator_);
  store_module(ck, "generator_ema", *ema_);
  store_module(ck, "discriminator", *disc_);
  return ck;
}

Generator load_generator(const Checkpoint& checkpoint, bool ema) {
  const auto it = checkpoint.metadata.find("num_classes");
  if (it == checkpoint.metadata.end()) {
    throw std::runtime_error("checkpoint/plan mismatch: no num_classes entry");
  }
  const auto plan = GeneratorPlan::build(checkpoint.config, std::stoll(it->second));
  const auto stored = checkpoint.metadata.find("generator_plan");
  if (stored == checkpoint.metadata.end() || stored->second != plan.describe()) {
    throw std::runtime_error("checkpoint/plan mismatch: generator plan differs");
  }
  Generator g(plan);
  restore_module(checkpoint, ema ? "generator_ema" : "generator", *g);
  g->eval();
  return g;
}

std::filesystem::path checkpoint_path(const std::filesystem::path& out_dir, int64_t epoch) {
  char name[64];
  std::snprintf(name, sizeof(name), "epoch_%07lld.ckpt", static_cast<long long>(epoch));
  return out_dir / "checkpoints" / name;
}

std::vector<LossReport> train(const ImageMaskPair& pair, const RunConfig& config,
                              const TrainOptions& options) {
  Trainer trainer(pair, config);
  std::filesystem::create_directories(options.out_dir / "checkpoints");
  std::ofstream log(options.out_dir / "losses.tsv", std::ios::trunc);
  if (!log) throw std::runtime_error("cannot write " + (options.out_dir / "losses.tsv").string());
  log << LossReport::tsv_header() << '\n';

  std::vector<LossReport> reports;
  const int64_t every = config.checkpoint_every;
  while (trainer.epoch() < config.total_epochs) {
    auto report = trainer.step();
    log << report.to_tsv() << '\n';
    log.flush();
    if (options.on_report) options.on_report(report);
    reports.push_back(report);
    if (trainer.epoch() % every == 0 || trainer.epoch() == config.total_epochs) {
      save_checkpoint(checkpoint_path(options.out_dir, trainer.epoch()), trainer.checkpoint());
    }
  }
  if (config.total_epochs == 0) {
    save_checkpoint(checkpoint_path(options.out_dir, 0), trainer.checkpoint());
  }
  return reports;
}

}  // namespace pairgen
