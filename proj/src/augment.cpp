#include "pairgen/augment.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include <ATen/CPUGeneratorImpl.h>

namespace pairgen {
namespace {

namespace F = torch::nn::functional;

using Mat3 = std::array<double, 9>;

Mat3 mul(const Mat3& a, const Mat3& b) {
  Mat3 c{};
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      double s = 0;
      for (int k = 0; k < 3; ++k) s += a[i * 3 + k] * b[k * 3 + j];
      c[i * 3 + j] = s;
    }
  }
  return c;
}

Mat3 identity3() { return {1, 0, 0, 0, 1, 0, 0, 0, 1}; }

Mat3 translate3(double tx, double ty) { return {1, 0, tx, 0, 1, ty, 0, 0, 1}; }

Mat3 scale3(double sx, double sy) { return {sx, 0, 0, 0, sy, 0, 0, 0, 1}; }

Mat3 rotate3(double radians) {
  const double c = std::cos(radians);
  const double s = std::sin(radians);
  return {c, -s, 0, s, c, 0, 0, 0, 1};
}

// Exact quarter turns; avoids cos/sin rounding.
Mat3 rot90_3(int k) {
  Mat3 r = identity3();
  const Mat3 q{0, -1, 0, 1, 0, 0, 0, 0, 1};
  for (int i = 0; i < ((k % 4) + 4) % 4; ++i) r = mul(q, r);
  return r;
}

Mat3 inverse_affine(const Mat3& m) {
  const double det = m[0] * m[4] - m[1] * m[3];
  if (std::abs(det) < 1e-12) throw std::invalid_argument("singular augmentation transform");
  const double a = m[4] / det, b = -m[1] / det, d = -m[3] / det, e = m[0] / det;
  return {a, b, -(a * m[2] + b * m[5]), d, e, -(d * m[2] + e * m[5]), 0, 0, 1};
}

Mat3 color_rotation(double radians) {
  // Rotation about the grey axis (1,1,1)/sqrt(3), Rodrigues form.
  const double c = std::cos(radians);
  const double s = std::sin(radians);
  const double k = 1.0 / std::sqrt(3.0);
  const double t = 1 - c;
  const double x = k, y = k, z = k;
  return {t * x * x + c,     t * x * y - s * z, t * x * z + s * y,
          t * x * y + s * z, t * y * y + c,     t * y * z - s * x,
          t * x * z - s * y, t * y * z + s * x, t * z * z + c};
}

Mat3 saturation_matrix(double factor) {
  // v v^T + factor (I - v v^T), v = grey axis.
  Mat3 m{};
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      const double proj = 1.0 / 3.0;
      m[i * 3 + j] = proj + factor * ((i == j ? 1.0 : 0.0) - proj);
    }
  }
  return m;
}

void set_geometry(AugmentParams& p, const Mat3& forward_pixels, Resolution frame) {
  // Normalised coords: x_n = x_p / (W/2), y_n = y_p / (H/2), centred.
  const Mat3 to_pixels = scale3(frame.width / 2.0, frame.height / 2.0);
  const Mat3 to_norm = scale3(2.0 / frame.width, 2.0 / frame.height);
  const Mat3 theta = mul(to_norm, mul(inverse_affine(forward_pixels), to_pixels));
  for (int i = 0; i < 6; ++i) p.theta[i] = theta[i];
  p.geometric = true;
}

torch::Tensor theta_tensor(const std::vector<AugmentParams>& params, const torch::TensorOptions& opts) {
  std::vector<double> flat;
  for (const auto& p : params) flat.insert(flat.end(), p.theta.begin(), p.theta.end());
  return torch::tensor(flat, torch::kDouble)
      .reshape({static_cast<int64_t>(params.size()), 2, 3})
      .to(opts.dtype());
}

torch::Tensor geometric_flags(const std::vector<AugmentParams>& params) {
  std::vector<uint8_t> flags;
  for (const auto& p : params) flags.push_back(p.geometric ? 1 : 0);
  return torch::tensor(flags, torch::kUInt8).to(torch::kBool);
}

torch::Tensor sample_grid(const torch::Tensor& theta, const torch::Tensor& like) {
  return F::affine_grid(theta, like.sizes(), /*align_corners=*/false);
}

}  // namespace

std::string to_string(Transform t) {
  switch (t) {
    case Transform::kXFlip: return "xflip";
    case Transform::kRotate90: return "rotate90";
    case Transform::kTranslateInt: return "translate_int";
    case Transform::kScale: return "scale";
    case Transform::kTranslateFrac: return "translate_frac";
    case Transform::kBrightness: return "brightness";
    case Transform::kContrast: return "contrast";
    case Transform::kSaturation: return "saturation";
    case Transform::kHue: return "hue";
    case Transform::kNoise: return "noise";
    case Transform::kCutout: return "cutout";
  }
  return "?";
}

bool is_geometric(Transform t) {
  switch (t) {
    case Transform::kXFlip:
    case Transform::kRotate90:
    case Transform::kTranslateInt:
    case Transform::kScale:
    case Transform::kTranslateFrac:
      return true;
    default:
      return false;
  }
}

AugmentationPolicy AugmentationPolicy::all(double probability) {
  AugmentationPolicy p;
  p.probability = probability;
  p.transforms = {Transform::kXFlip,      Transform::kRotate90,      Transform::kTranslateInt,
                  Transform::kScale,      Transform::kTranslateFrac, Transform::kBrightness,
                  Transform::kContrast,   Transform::kSaturation,    Transform::kHue,
                  Transform::kNoise,      Transform::kCutout};
  return p;
}

AugmentationPolicy AugmentationPolicy::from_config(const RunConfig& c) {
  AugmentationPolicy p;
  p.probability = c.da_probability;
  p.fa_probability = c.fa_probability;
  const std::pair<bool, Transform> toggles[] = {
      {c.da_xflip, Transform::kXFlip},           {c.da_rotate90, Transform::kRotate90},
      {c.da_translate_int, Transform::kTranslateInt}, {c.da_scale, Transform::kScale},
      {c.da_translate_frac, Transform::kTranslateFrac}, {c.da_brightness, Transform::kBrightness},
      {c.da_contrast, Transform::kContrast},     {c.da_saturation, Transform::kSaturation},
      {c.da_hue, Transform::kHue},               {c.da_noise, Transform::kNoise},
      {c.da_cutout, Transform::kCutout}};
  for (const auto& [on, t] : toggles) {
    if (on) p.transforms.push_back(t);
  }
  return p;
}

AugmentParams geometric_params(bool flip, int rot90, double scale, double tx_pixels,
                               double ty_pixels, double rotate_radians, Resolution frame) {
  Mat3 m = identity3();
  if (flip) m = mul(scale3(-1, 1), m);
  m = mul(rot90_3(rot90), m);
  if (rotate_radians != 0.0) m = mul(rotate3(rotate_radians), m);
  m = mul(scale3(scale, scale), m);
  m = mul(translate3(tx_pixels, ty_pixels), m);
  AugmentParams p;
  set_geometry(p, m, frame);
  return p;
}

AugmentParams sample_params(const AugmentationPolicy& policy, Rng& rng, Resolution frame) {
  AugmentParams p;
  Mat3 geo = identity3();
  bool any_geo = false;
  Mat3 color = identity3();
  std::array<double, 3> offset{0, 0, 0};

  for (Transform t : policy.transforms) {
    if (!rng.bernoulli(policy.probability)) continue;
    switch (t) {
      case Transform::kXFlip:
        if (rng.bernoulli(0.5)) {
          geo = mul(scale3(-1, 1), geo);
          any_geo = true;
        }
        break;
      case Transform::kRotate90: {
        const int k = static_cast<int>(rng.randint(0, 4));
        if (k != 0) {
          geo = mul(rot90_3(k), geo);
          any_geo = true;
        }
        break;
      }
      case Transform::kTranslateInt: {
        // Whole pixels of the final frame: up to 1/8 of each side.
        const double tx = std::round(rng.uniform(-0.125, 0.125) * frame.width);
        const double ty = std::round(rng.uniform(-0.125, 0.125) * frame.height);
        geo = mul(translate3(tx, ty), geo);
        any_geo = true;
        break;
      }
      case Transform::kScale: {
        const double s = std::exp2(rng.normal(0.0, 0.2));
        geo = mul(scale3(s, s), geo);
        any_geo = true;
        break;
      }
      case Transform::kTranslateFrac: {
        const double tx = rng.normal(0.0, 0.125) * frame.width;
        const double ty = rng.normal(0.0, 0.125) * frame.height;
        geo = mul(translate3(tx, ty), geo);
        any_geo = true;
        break;
      }
      case Transform::kBrightness: {
        const double b = rng.normal(0.0, 0.2);
        for (auto& o : offset) o += b;
        p.color_active = true;
        break;
      }
      case Transform::kContrast: {
        const double c = std::exp2(rng.normal(0.0, 0.5));
        color = mul(Mat3{c, 0, 0, 0, c, 0, 0, 0, c}, color);
        for (auto& o : offset) o *= c;
        p.color_active = true;
        break;
      }
      case Transform::kSaturation: {
        const Mat3 s = saturation_matrix(std::exp2(rng.normal(0.0, 1.0)));
        color = mul(s, color);
        // Offsets are grey, which saturation leaves unchanged.
        p.color_active = true;
        break;
      }
      case Transform::kHue: {
        const Mat3 r = color_rotation(rng.uniform(-std::numbers::pi, std::numbers::pi));
        color = mul(r, color);
        p.color_active = true;
        break;
      }
      case Transform::kNoise:
        p.noise_std = std::abs(rng.normal(0.0, 0.1));
        p.noise_seed = rng.next_seed();
        break;
      case Transform::kCutout:
        p.cutout = true;
        p.cutout_cy = rng.uniform();
        p.cutout_cx = rng.uniform();
        p.cutout_h = 0.5;
        p.cutout_w = 0.5;
        break;
    }
  }
  if (any_geo) set_geometry(p, geo, frame);
  p.color = color;
  p.offset = offset;
  return p;
}

torch::Tensor apply_to_images(const torch::Tensor& images, const std::vector<AugmentParams>& params) {
  if (images.dim() != 4 || images.size(0) != static_cast<int64_t>(params.size())) {
    throw std::invalid_argument("apply_to_images: expected (B,3,h,w) with one params per sample");
  }
  const int64_t batch = images.size(0);
  const int64_t h = images.size(2);
  const int64_t w = images.size(3);
  const auto opts = images.options();
  auto out = images;

  const auto geo = geometric_flags(params);
  if (geo.any().item<bool>()) {
    auto grid = sample_grid(theta_tensor(params, opts), images);
    auto warped = F::grid_sample(images, grid,
                                 F::GridSampleFuncOptions()
                                     .mode(torch::kBilinear)
                                     .padding_mode(torch::kZeros)
                                     .align_corners(false));
    out = torch::where(geo.view({batch, 1, 1, 1}), warped, out);
  }

  bool any_color = false;
  for (const auto& p : params) any_color |= p.color_active;
  if (any_color) {
    std::vector<double> mats, offs;
    for (const auto& p : params) {
      mats.insert(mats.end(), p.color.begin(), p.color.end());
      offs.insert(offs.end(), p.offset.begin(), p.offset.end());
    }
    auto m = torch::tensor(mats, torch::kDouble).reshape({batch, 3, 3}).to(opts.dtype());
    auto o = torch::tensor(offs, torch::kDouble).reshape({batch, 3, 1, 1}).to(opts.dtype());
    out = torch::einsum("bij,bjhw->bihw", {m, out}) + o;
  }

  std::vector<torch::Tensor> per_sample;
  bool any_noise_or_cutout = false;
  for (const auto& p : params) any_noise_or_cutout |= (p.noise_std > 0 || p.cutout);
  if (any_noise_or_cutout) {
    for (int64_t b = 0; b < batch; ++b) {
      const auto& p = params[b];
      auto x = out[b];
      if (p.noise_std > 0) {
        auto gen = at::make_generator<at::CPUGeneratorImpl>(p.noise_seed);
        x = x + torch::randn(x.sizes(), gen, opts) * p.noise_std;
      }
      if (p.cutout) {
        auto ys = (torch::arange(h, opts).add(0.5).div(h) - p.cutout_cy).abs().lt(p.cutout_h / 2);
        auto xs = (torch::arange(w, opts).add(0.5).div(w) - p.cutout_cx).abs().lt(p.cutout_w / 2);
        auto hole = ys.view({h, 1}).logical_and(xs.view({1, w}));
        x = x.masked_fill(hole.unsqueeze(0), 0.0);
      }
      per_sample.push_back(x);
    }
    out = torch::stack(per_sample);
  }
  return out;
}

torch::Tensor apply_to_masks(const torch::Tensor& masks, const std::vector<AugmentParams>& params) {
  if (masks.dim() != 4 || masks.size(0) != static_cast<int64_t>(params.size())) {
    throw std::invalid_argument("apply_to_masks: expected (B,N,h,w) with one params per sample");
  }
  const auto geo = geometric_flags(params);
  if (!geo.any().item<bool>()) return masks;
  const int64_t batch = masks.size(0);
  auto grid = sample_grid(theta_tensor(params, masks.options()), masks);
  const auto nearest = F::GridSampleFuncOptions()
                           .mode(torch::kNearest)
                           .padding_mode(torch::kZeros)
                           .align_corners(false);
  auto warped = F::grid_sample(masks, grid, nearest);
  torch::Tensor valid;
  {
    torch::NoGradGuard no_grad;
    auto ones = torch::ones({batch, 1, masks.size(2), masks.size(3)}, masks.options());
    valid = F::grid_sample(ones, grid, nearest);
  }
  auto background = torch::zeros_like(valid).expand({batch, masks.size(1), masks.size(2), masks.size(3)}).clone();
  background.select(1, 0).copy_(1.0 - valid.squeeze(1));
  warped = warped + background;
  return torch::where(geo.view({batch, 1, 1, 1}), warped, masks);
}

std::pair<torch::Tensor, torch::Tensor> augment_pair(const torch::Tensor& image,
                                                     const torch::Tensor& mask,
                                                     const AugmentationPolicy& policy,
                                                     uint64_t seed) {
  Rng rng(seed);
  std::vector<AugmentParams> params{sample_params(policy, rng, {image.size(1), image.size(2)})};
  auto img = apply_to_images(image.unsqueeze(0), params).squeeze(0);
  auto m = apply_to_masks(mask.unsqueeze(0), params).squeeze(0);
  return {img, m};
}

AugmentedBatch augment_batch(const std::vector<torch::Tensor>& images, const torch::Tensor& masks,
                             const AugmentationPolicy& policy, Rng& rng) {
  if (images.empty()) throw std::invalid_argument("augment_batch: no images");
  const auto& full = images.front();
  const Resolution frame{full.size(2), full.size(3)};
  std::vector<AugmentParams> params;
  for (int64_t b = 0; b < full.size(0); ++b) params.push_back(sample_params(policy, rng, frame));
  AugmentedBatch out;
  for (const auto& scale : images) out.images.push_back(apply_to_images(scale, params));
  out.masks = apply_to_masks(masks, params);
  return out;
}

ContentVectorSet mix_background(const ContentVectorSet& vectors, const std::vector<int64_t>& partner,
                                const std::vector<double>& weight) {
  const int64_t batch = vectors.vectors.size(0);
  if (static_cast<int64_t>(partner.size()) != batch ||
      static_cast<int64_t>(weight.size()) != batch) {
    throw std::invalid_argument("mix_background: need one partner and weight per sample");
  }
  ContentVectorSet out = vectors;
  auto background = vectors.vectors.select(1, 0);  // (B,C)
  std::vector<torch::Tensor> mixed;
  for (int64_t b = 0; b < batch; ++b) {
    const int64_t q = partner[b];
    const bool usable = weight[b] != 0.0 && vectors.present[b][0].item<bool>() &&
                        vectors.present[q][0].item<bool>();
    mixed.push_back(usable ? background[b] * (1.0 - weight[b]) + background[q] * weight[b]
                           : background[b]);
  }
  auto bg = torch::stack(mixed).unsqueeze(1);
  out.vectors = torch::cat({bg, vectors.vectors.narrow(1, 1, vectors.vectors.size(1) - 1)}, 1);
  return out;
}

ContentVectorSet content_fa(const ContentVectorSet& vectors, double probability, Rng& rng) {
  const int64_t batch = vectors.vectors.size(0);
  if (batch < 2) return vectors;
  std::vector<int64_t> partner(batch);
  std::vector<double> weight(batch, 0.0);
  for (int64_t b = 0; b < batch; ++b) {
    partner[b] = (b + rng.randint(1, batch)) % batch;
    if (rng.bernoulli(probability)) weight[b] = rng.uniform();
  }
  return mix_background(vectors, partner, weight);
}

ContentVectorSet content_fa(const ContentVectorSet& vectors, double probability, uint64_t seed) {
  Rng rng(seed);
  return content_fa(vectors, probability, rng);
}

torch::Tensor swap_regions(const torch::Tensor& feature, const torch::Tensor& labels,
                           const std::vector<int64_t>& partner, const torch::Tensor& selected) {
  const int64_t batch = feature.size(0);
  if (labels.dim() != 3 || labels.size(0) != batch || labels.size(1) != feature.size(2) ||
      labels.size(2) != feature.size(3)) {
    throw std::invalid_argument("swap_regions: labels must be (B,h,w) on F's grid");
  }
  if (static_cast<int64_t>(partner.size()) != batch) {
    throw std::invalid_argument("swap_regions: need one partner per sample");
  }
  std::vector<torch::Tensor> rows;
  for (int64_t b = 0; b < batch; ++b) {
    auto chosen = selected[b].nonzero().reshape({-1});
    auto region = torch::isin(labels[b], chosen).unsqueeze(0);  // (1,h,w)
    rows.push_back(torch::where(region, feature[partner[b]], feature[b]));
  }
  return torch::stack(rows);
}

torch::Tensor layout_fa(const torch::Tensor& feature, const torch::Tensor& labels,
                        int64_t num_classes, double probability, Rng& rng) {
  const int64_t batch = feature.size(0);
  if (batch < 2) return feature;
  std::vector<int64_t> partner(batch);
  auto selected = torch::zeros({batch, num_classes}, torch::kBool);
  for (int64_t b = 0; b < batch; ++b) {
    partner[b] = (b + rng.randint(1, batch)) % batch;
    if (!rng.bernoulli(probability)) continue;
    auto counts = torch::bincount(labels[b].reshape({-1}).to(torch::kLong), {}, num_classes);
    std::vector<int64_t> present;
    for (int64_t i = 0; i < num_classes; ++i) {
      if (counts[i].item<int64_t>() > 0) present.push_back(i);
    }
    bool any = false;
    for (int64_t i : present) {
      if (rng.bernoulli(0.5)) {
        selected[b][i] = true;
        any = true;
      }
    }
    if (!any && !present.empty()) {
      selected[b][present[rng.randint(0, static_cast<int64_t>(present.size()))]] = true;
    }
  }
  if (!selected.any().item<bool>()) return feature;
  return swap_regions(feature, labels, partner, selected);
}

torch::Tensor layout_fa(const torch::Tensor& feature, const torch::Tensor& labels,
                        int64_t num_classes, double probability, uint64_t seed) {
  Rng rng(seed);
  return layout_fa(feature, labels, num_classes, probability, rng);
}

}  // namespace pairgen
