#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace pairgen {

struct Resolution {
  int64_t height = 0;
  int64_t width = 0;

  bool operator==(const Resolution&) const = default;
};

std::string to_string(Resolution r);

// Parses "HxW" (e.g. "384x640").
Resolution parse_resolution(std::string_view text);

// How the fake class enters the discriminator object loss.
enum class FakeTermForm {
  kCrossEntropy,  // -log softmax_fake
  kLiteral,       // -log(1 - softmax_fake)
};

// Every field has a key of the same name in the config file.
struct RunConfig {
  Resolution resolution{384, 640};
  int64_t latent_dim = 64;
  Resolution base_grid{3, 5};
  int64_t n_lowlevel_blocks = 4;
  int64_t p0_epochs = 15000;
  int64_t total_epochs = 150000;
  double learning_rate = 0.0002;
  double beta1 = 0.5;
  double beta2 = 0.999;
  int64_t batch_size = 3;
  double ema_decay = 0.9999;
  double da_probability = 0.3;
  double fa_probability = 0.3;
  int64_t pool_size = 100;
  double filter_fraction = 0.15;
  uint64_t seed = 0;

  double channel_multiplier = 1.0;
  int64_t checkpoint_every = 1000;
  FakeTermForm object_fake_term = FakeTermForm::kCrossEntropy;

  bool da_xflip = true;
  bool da_rotate90 = true;
  bool da_translate_int = true;
  bool da_scale = true;
  bool da_translate_frac = true;
  bool da_brightness = true;
  bool da_contrast = true;
  bool da_saturation = true;
  bool da_hue = true;
  bool da_noise = true;
  bool da_cutout = true;

  // Number of 2x upsampling steps between base_grid and resolution.
  int64_t upsampling_stages() const;

  // Throws std::invalid_argument naming the offending key.
  void validate() const;
};

// Key table in canonical order.
const std::vector<std::string>& config_keys();

// Throws std::invalid_argument for unknown keys or unparsable values.
void set_config_value(RunConfig& config, std::string_view key, std::string_view value);
std::string get_config_value(const RunConfig& config, std::string_view key);

// key=value lines; '#' starts a comment; blank lines ignored.
RunConfig parse_config(std::string_view text);
RunConfig load_config(const std::filesystem::path& path);
std::string serialize_config(const RunConfig& config);

// Largest base_grid * 2^k that fits inside `requested` in both dimensions.
// Inputs at other sizes are resized to this before training.
Resolution nearest_compatible_resolution(Resolution requested, Resolution base_grid);

}  // namespace pairgen
