#include "pairgen/evalkit.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "pairgen/augment.hpp"
#include "pairgen/rng.hpp"

namespace pairgen {
namespace {

torch::Tensor psd_sqrt(const torch::Tensor& sym) {
  auto [evals, evecs] = torch::linalg_eigh(sym);
  return evecs.matmul(torch::diag(evals.clamp_min(0.0).sqrt())).matmul(evecs.transpose(0, 1));
}

torch::Tensor unit_normalize(const torch::Tensor& t) {
  return t / (t.pow(2).sum(1, true).sqrt() + 1e-10);
}

}  // namespace

GaussianFit fit_gaussian(const torch::Tensor& features) {
  if (features.dim() != 2 || features.size(0) < 2) {
    throw std::invalid_argument("fit_gaussian needs an (n>=2, d) feature matrix");
  }
  auto x = features.to(torch::kFloat64);
  GaussianFit g;
  g.count = x.size(0);
  g.mean = x.mean(0);
  auto c = x - g.mean;
  g.covariance = c.transpose(0, 1).matmul(c) / static_cast<double>(g.count - 1);
  if (g.count <= x.size(1)) {
    g.covariance = g.covariance + kCovarianceEpsilon * torch::eye(x.size(1), torch::kFloat64);
    g.regularized = true;
  }
  return g;
}

GaussianFit make_gaussian(torch::Tensor mean, torch::Tensor covariance) {
  GaussianFit g;
  g.mean = mean.to(torch::kFloat64);
  g.covariance = covariance.to(torch::kFloat64);
  return g;
}

double frechet_distance(const GaussianFit& a, const GaussianFit& b) {
  if (!a.mean.sizes().equals(b.mean.sizes())) {
    throw std::invalid_argument("frechet_distance: dimension mismatch");
  }
  const double mean_term = (a.mean - b.mean).pow(2).sum().item<double>();
  // Tr (S1 S2)^{1/2} = Tr (S1^{1/2} S2 S1^{1/2})^{1/2}; the inner matrix is
  // symmetric PSD, so its root comes from a symmetric eigendecomposition.
  auto r = psd_sqrt(a.covariance);
  auto inner = r.matmul(b.covariance).matmul(r);
  inner = 0.5 * (inner + inner.transpose(0, 1));
  const double cross = torch::linalg_eigvalsh(inner).clamp_min(0.0).sqrt().sum().item<double>();
  const double d = mean_term + a.covariance.trace().item<double>() +
                   b.covariance.trace().item<double>() - 2.0 * cross;
  return std::max(0.0, d);
}

std::array<GaussianFit, 4> fit_taps(FeatureExtractor& extractor, const torch::Tensor& image) {
  auto t = extractor.taps(image);
  std::array<GaussianFit, 4> fits;
  for (int l = 0; l < 4; ++l) fits[l] = fit_gaussian(t[l][0].flatten(1).transpose(0, 1));
  return fits;
}

double sifid(const torch::Tensor& real, const torch::Tensor& fake, int layer,
             FeatureExtractor& extractor) {
  auto a = fit_gaussian(extractor.patch_features(real, layer));
  auto b = fit_gaussian(extractor.patch_features(fake, layer));
  return frechet_distance(a, b);
}

SifidReport sifid_report(const std::array<GaussianFit, 4>& real, const torch::Tensor& fake,
                         int64_t sample_id, FeatureExtractor& extractor) {
  SifidReport r;
  r.sample_id = sample_id;
  auto fits = fit_taps(extractor, fake);
  for (int l = 0; l < 4; ++l) {
    r.per_layer[l] = frechet_distance(real[l], fits[l]);
    r.regularized[l] = real[l].regularized || fits[l].regularized;
  }
  return r;
}

double lpips_distance(const torch::Tensor& a, const torch::Tensor& b, FeatureExtractor& extractor) {
  auto ta = extractor.taps(a);
  auto tb = extractor.taps(b);
  double total = 0.0;
  for (int l = 0; l < 3; ++l) {
    auto d = (unit_normalize(ta[l].to(torch::kFloat64)) - unit_normalize(tb[l].to(torch::kFloat64)))
                 .pow(2)
                 .sum(1)
                 .mean();
    total += d.item<double>();
  }
  return total;
}

LpipsReport lpips_diversity(const std::vector<torch::Tensor>& samples,
                            std::optional<int64_t> max_pairs, uint64_t seed,
                            FeatureExtractor& extractor) {
  const int64_t n = static_cast<int64_t>(samples.size());
  if (n < 2) throw std::invalid_argument("lpips_diversity needs at least 2 samples");
  std::vector<std::pair<int64_t, int64_t>> pairs;
  const int64_t all = n * (n - 1) / 2;
  LpipsReport report;
  if (!max_pairs || *max_pairs >= all) {
    for (int64_t i = 0; i < n; ++i)
      for (int64_t j = i + 1; j < n; ++j) pairs.emplace_back(i, j);
  } else {
    if (*max_pairs < 1) throw std::invalid_argument("lpips_diversity: max_pairs must be >= 1");
    Rng rng(seed);
    for (int64_t k = 0; k < *max_pairs; ++k) {
      const int64_t i = rng.randint(0, n);
      int64_t j = rng.randint(0, n - 1);
      if (j >= i) ++j;
      pairs.emplace_back(std::min(i, j), std::max(i, j));
    }
    report.exhaustive = false;
  }
  double sum = 0.0;
  for (const auto& [i, j] : pairs) sum += lpips_distance(samples[i], samples[j], extractor);
  report.pairs = static_cast<int64_t>(pairs.size());
  report.mean = sum / static_cast<double>(report.pairs);
  return report;
}

std::vector<double> per_class_iou(const torch::Tensor& predicted, const torch::Tensor& reference,
                                  int64_t num_classes) {
  if (!predicted.sizes().equals(reference.sizes())) {
    throw std::invalid_argument("per_class_iou: shape mismatch");
  }
  std::vector<double> out(num_classes, std::numeric_limits<double>::quiet_NaN());
  for (int64_t c = 0; c < num_classes; ++c) {
    auto r = reference.eq(c);
    const int64_t ref_count = r.sum().item<int64_t>();
    if (ref_count == 0) continue;
    auto p = predicted.eq(c);
    const double inter = static_cast<double>((p & r).sum().item<int64_t>());
    const double uni = static_cast<double>((p | r).sum().item<int64_t>());
    out[c] = inter / uni;
  }
  return out;
}

double mean_present_iou(const std::vector<double>& ious) {
  double sum = 0.0;
  int count = 0;
  for (double v : ious) {
    if (std::isnan(v)) continue;
    sum += v;
    ++count;
  }
  return count ? sum / count : 0.0;
}

std::vector<std::pair<torch::Tensor, torch::Tensor>> reference_views(const ImageMaskPair& reference,
                                                                     int64_t views, uint64_t seed) {
  std::vector<std::pair<torch::Tensor, torch::Tensor>> out;
  out.emplace_back(reference.image, reference.mask);
  Rng rng(seed);
  const Resolution frame{reference.height(), reference.width()};
  auto one_hot = to_one_hot(reference.mask, reference.num_classes).unsqueeze(0);
  for (int64_t v = 0; v < views; ++v) {
    const bool flip = rng.bernoulli(0.5);
    const double zoom = rng.uniform(1.0, 1.25);
    const double angle = rng.uniform(-15.0, 15.0) * std::numbers::pi / 180.0;
    auto params = geometric_params(flip, 0, zoom, 0.0, 0.0, angle, frame);
    auto image = apply_to_images(reference.image.unsqueeze(0), {params})[0];
    auto mask = one_hot_to_labels(apply_to_masks(one_hot, {params}))[0];
    out.emplace_back(image, mask);
  }
  return out;
}

AlignmentScore alignment_miou(const std::vector<ImageMaskPair>& generated,
                              const ImageMaskPair& reference, const AlignmentOptions& options) {
  if (generated.empty()) throw std::invalid_argument("alignment_miou needs generated pairs");
  for (const auto& g : generated) {
    if (g.num_classes != reference.num_classes) {
      throw std::invalid_argument("alignment_miou: generated N=" + std::to_string(g.num_classes) +
                                  " but reference N=" + std::to_string(reference.num_classes));
    }
  }
  auto net = train_segmenter(generated, options.segmenter);
  const auto views = reference_views(reference, options.views, options.segmenter.seed + 1);

  AlignmentScore score;
  const int64_t n = reference.num_classes;
  std::vector<double> class_sum(n, 0.0);
  std::vector<int> class_count(n, 0);
  double miou_sum = 0.0;
  for (std::size_t v = 0; v < views.size(); ++v) {
    auto pred = predict_labels(net, views[v].first);
    auto ious = per_class_iou(pred, views[v].second, n);
    const double m = mean_present_iou(ious);
    if (v == 0) score.unaugmented_miou = m;
    miou_sum += m;
    for (int64_t c = 0; c < n; ++c) {
      if (std::isnan(ious[c])) continue;
      class_sum[c] += ious[c];
      ++class_count[c];
    }
  }
  score.views = static_cast<int64_t>(views.size());
  score.miou = miou_sum / static_cast<double>(views.size());
  score.per_class_iou.assign(n, std::numeric_limits<double>::quiet_NaN());
  for (int64_t c = 0; c < n; ++c) {
    if (class_count[c]) score.per_class_iou[c] = class_sum[c] / class_count[c];
  }
  return score;
}

}  // namespace pairgen
