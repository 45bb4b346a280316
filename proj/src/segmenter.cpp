#include "pairgen/segmenter.hpp"

#include <cmath>
#include <numeric>

#include "pairgen/rng.hpp"

namespace pairgen {
namespace {

namespace F = torch::nn::functional;
namespace nn = torch::nn;

constexpr int kLevels = 4;

}  // namespace

nn::Sequential UNetImpl::block(int64_t in, int64_t out) {
  return nn::Sequential(nn::Conv2d(nn::Conv2dOptions(in, out, 3).padding(1)),
                        nn::BatchNorm2d(out), nn::ReLU(),
                        nn::Conv2d(nn::Conv2dOptions(out, out, 3).padding(1)),
                        nn::BatchNorm2d(out), nn::ReLU());
}

UNetImpl::UNetImpl(int64_t num_classes, int64_t base_width) {
  int64_t in = 3;
  for (int l = 0; l < kLevels; ++l) {
    const int64_t w = base_width << l;
    down_.push_back(register_module("down" + std::to_string(l), block(in, w)));
    in = w;
  }
  bottom_ = register_module("bottom", block(in, base_width << kLevels));
  for (int l = kLevels - 1; l >= 0; --l) {
    const int64_t w = base_width << l;
    up_.push_back(register_module(
        "up" + std::to_string(l),
        nn::ConvTranspose2d(nn::ConvTranspose2dOptions(w * 2, w, 2).stride(2))));
    merge_.push_back(register_module("merge" + std::to_string(l), block(w * 2, w)));
  }
  head_ = register_module("head", nn::Conv2d(nn::Conv2dOptions(base_width, num_classes, 1)));
}

torch::Tensor UNetImpl::forward(const torch::Tensor& input) {
  const int64_t h = input.size(2), w = input.size(3);
  const int64_t m = 1 << kLevels;
  const int64_t ph = (m - h % m) % m, pw = (m - w % m) % m;
  auto x = (ph || pw) ? F::pad(input, F::PadFuncOptions({0, pw, 0, ph}).mode(torch::kReplicate))
                      : input;
  std::vector<torch::Tensor> skips;
  for (auto& d : down_) {
    x = d->forward(x);
    skips.push_back(x);
    x = F::max_pool2d(x, F::MaxPool2dFuncOptions(2));
  }
  x = bottom_->forward(x);
  for (std::size_t i = 0; i < up_.size(); ++i) {
    x = up_[i]->forward(x);
    x = merge_[i]->forward(torch::cat({x, skips[skips.size() - 1 - i]}, 1));
  }
  x = head_->forward(x);
  return x.slice(2, 0, h).slice(3, 0, w);
}

UNet train_segmenter(const std::vector<ImageMaskPair>& pairs, const SegmenterConfig& config) {
  if (pairs.empty()) throw std::invalid_argument("segmenter needs at least one pair");
  const int64_t n = pairs.front().num_classes;
  for (const auto& p : pairs) {
    if (p.num_classes != n) throw std::invalid_argument("segmenter pairs disagree on N");
  }
  torch::manual_seed(config.seed);
  Rng rng(config.seed);
  UNet net(n, config.base_width);
  net->train();
  torch::optim::Adam opt(net->parameters(), torch::optim::AdamOptions(config.learning_rate));

  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);
  // Short final batches wrap around, so every batch is full.
  const std::size_t per_batch = static_cast<std::size_t>(config.batch_size);
  double last = 0.0;
  for (int64_t epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[static_cast<std::size_t>(rng.randint(0, static_cast<int64_t>(i)))]);
    }
    const std::size_t steps = std::max<std::size_t>(1, (order.size() + per_batch - 1) / per_batch);
    for (std::size_t s = 0; s < steps; ++s) {
      std::vector<torch::Tensor> xs, ys;
      for (std::size_t k = 0; k < per_batch; ++k) {
        const auto& p = pairs[order[(s * per_batch + k) % order.size()]];
        xs.push_back(p.image);
        ys.push_back(p.mask);
      }
      auto logits = net->forward(torch::stack(xs));
      auto loss = F::cross_entropy(logits, torch::stack(ys));
      last = loss.item<double>();
      if (!std::isfinite(last)) {
        throw SegmenterDiverged("segmenter loss became non-finite at epoch " +
                                    std::to_string(epoch),
                                last);
      }
      opt.zero_grad();
      loss.backward();
      opt.step();
    }
  }
  net->eval();
  return net;
}

torch::Tensor predict_labels(UNet& net, const torch::Tensor& image) {
  torch::NoGradGuard no_grad;
  net->eval();
  return net->forward(image.unsqueeze(0)).argmax(1)[0];
}

}  // namespace pairgen
