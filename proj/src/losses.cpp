#include "pairgen/losses.hpp"

#include <stdexcept>

namespace pairgen {
namespace {

namespace F = torch::nn::functional;

torch::Tensor zero_like_logits(const ObjectLogits& l) {
  // Keeps the graph connected even when no row exists.
  return l.logits.sum() * 0.0;
}

}  // namespace

torch::Tensor d_object_loss(const ObjectLogits& real, const ObjectLogits& fake,
                            const torch::Tensor& alpha, FakeTermForm form,
                            LossCounters* counters) {
  torch::Tensor real_term;
  if (real.logits.size(0) == 0) {
    if (counters) ++counters->empty_real;
    real_term = zero_like_logits(real);
  } else {
    auto log_p = torch::log_softmax(real.logits, 1);
    auto picked = log_p.gather(1, real.identity.unsqueeze(1)).squeeze(1);  // (M)
    auto w = alpha.to(log_p.scalar_type()).index({real.sample, real.identity});
    real_term = -(w * picked).sum() / static_cast<double>(real.batch_size);
  }

  torch::Tensor fake_term;
  if (fake.logits.size(0) == 0) {
    if (counters) ++counters->empty_fake;
    fake_term = zero_like_logits(fake);
  } else {
    const int64_t fake_class = fake.logits.size(1) - 1;
    auto log_p = torch::log_softmax(fake.logits, 1).select(1, fake_class);
    if (form == FakeTermForm::kCrossEntropy) {
      fake_term = -log_p.sum() / static_cast<double>(fake.batch_size);
    } else {
      // log(1 - p) = log(-expm1(log p)), stable near p -> 1.
      auto log_not = torch::log(-torch::expm1(log_p).clamp_max(-1e-12));
      fake_term = -log_not.sum() / static_cast<double>(fake.batch_size);
    }
  }
  return real_term + fake_term;
}

torch::Tensor g_object_loss(const ObjectLogits& fake, LossCounters* counters) {
  if (fake.logits.size(0) == 0) {
    if (counters) ++counters->degenerate_fake_masks;
    return zero_like_logits(fake);
  }
  auto log_p = torch::log_softmax(fake.logits, 1);
  auto picked = log_p.gather(1, fake.identity.unsqueeze(1)).squeeze(1);
  return -picked.sum() / static_cast<double>(fake.batch_size);
}

torch::Tensor binary_multilayer_loss(const std::vector<torch::Tensor>& maps, Target target,
                                     Side side) {
  if (maps.empty()) throw std::invalid_argument("binary_multilayer_loss: no maps");
  if (side == Side::kGenerator && target != Target::kReal) {
    throw std::invalid_argument("generator loss is non-saturating: target must be real");
  }
  const double value = target == Target::kReal ? 1.0 : 0.0;
  torch::Tensor total;
  for (const auto& m : maps) {
    auto l = F::binary_cross_entropy_with_logits(m, torch::full_like(m, value));
    total = total.defined() ? total + l : l;
  }
  return total / static_cast<double>(maps.size());
}

}  // namespace pairgen
