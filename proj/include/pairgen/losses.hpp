#pragma once

#include <vector>

#include <torch/torch.h>

#include "pairgen/config.hpp"
#include "pairgen/discmodel.hpp"

namespace pairgen {

enum class Target { kReal, kFake };
enum class Side { kDiscriminator, kGenerator };

// Incremented when a loss side has no present content vector at all.
struct LossCounters {
  int64_t empty_real = 0;
  int64_t empty_fake = 0;
  int64_t degenerate_fake_masks = 0;
};

// Object discriminator loss, averaged over the batch:
//   real: -sum_i alpha_i log softmax_i(real_i)      over present real vectors
//   fake: -sum_i log softmax_fake(fake_i)           (kCrossEntropy)
//         -sum_i log(1 - softmax_fake(fake_i))      (kLiteral)
// `alpha` is (B,N), one row per real sample.
torch::Tensor d_object_loss(const ObjectLogits& real, const ObjectLogits& fake,
                            const torch::Tensor& alpha,
                            FakeTermForm form = FakeTermForm::kCrossEntropy,
                            LossCounters* counters = nullptr);

// Generator object loss: each fake region should be classified as the
// identity its generated mask claims. -sum_i log softmax_i(fake_i), averaged
// over the batch.
torch::Tensor g_object_loss(const ObjectLogits& fake, LossCounters* counters = nullptr);

// Mean over layers of the per-pixel mean binary cross-entropy against
// `target`. The generator side is non-saturating and only accepts kReal.
torch::Tensor binary_multilayer_loss(const std::vector<torch::Tensor>& maps, Target target,
                                     Side side);

}  // namespace pairgen
