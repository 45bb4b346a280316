#include "pairgen/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>

namespace pairgen {
namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value) {
  throw std::invalid_argument("config: bad value '" + std::string(value) + "' for key '" +
                              std::string(key) + "'");
}

int64_t parse_int(std::string_view key, std::string_view value) {
  int64_t out = 0;
  const auto* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) bad_value(key, value);
  return out;
}

uint64_t parse_uint(std::string_view key, std::string_view value) {
  uint64_t out = 0;
  const auto* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) bad_value(key, value);
  return out;
}

double parse_double(std::string_view key, std::string_view value) {
  std::string copy(value);
  std::size_t used = 0;
  double out = 0;
  try {
    out = std::stod(copy, &used);
  } catch (const std::exception&) {
    bad_value(key, value);
  }
  if (used != copy.size() || !std::isfinite(out)) bad_value(key, value);
  return out;
}

bool parse_bool(std::string_view key, std::string_view value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  bad_value(key, value);
}

std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

struct Field {
  std::function<void(RunConfig&, std::string_view key, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename T>
Field int_field(T RunConfig::*member) {
  return {[member](RunConfig& c, std::string_view k, std::string_view v) {
            if constexpr (std::is_unsigned_v<T>) {
              c.*member = parse_uint(k, v);
            } else {
              c.*member = parse_int(k, v);
            }
          },
          [member](const RunConfig& c) { return std::to_string(c.*member); }};
}

Field double_field(double RunConfig::*member) {
  return {[member](RunConfig& c, std::string_view k, std::string_view v) {
            c.*member = parse_double(k, v);
          },
          [member](const RunConfig& c) { return format_double(c.*member); }};
}

Field bool_field(bool RunConfig::*member) {
  return {[member](RunConfig& c, std::string_view k, std::string_view v) {
            c.*member = parse_bool(k, v);
          },
          [member](const RunConfig& c) { return std::string(c.*member ? "true" : "false"); }};
}

Field resolution_field(Resolution RunConfig::*member) {
  return {[member](RunConfig& c, std::string_view k, std::string_view v) {
            try {
              c.*member = parse_resolution(v);
            } catch (const std::invalid_argument&) {
              bad_value(k, v);
            }
          },
          [member](const RunConfig& c) { return to_string(c.*member); }};
}

const std::vector<std::pair<std::string, Field>>& field_table() {
  static const std::vector<std::pair<std::string, Field>> table = {
      {"resolution", resolution_field(&RunConfig::resolution)},
      {"latent_dim", int_field(&RunConfig::latent_dim)},
      {"base_grid", resolution_field(&RunConfig::base_grid)},
      {"n_lowlevel_blocks", int_field(&RunConfig::n_lowlevel_blocks)},
      {"p0_epochs", int_field(&RunConfig::p0_epochs)},
      {"total_epochs", int_field(&RunConfig::total_epochs)},
      {"learning_rate", double_field(&RunConfig::learning_rate)},
      {"beta1", double_field(&RunConfig::beta1)},
      {"beta2", double_field(&RunConfig::beta2)},
      {"batch_size", int_field(&RunConfig::batch_size)},
      {"ema_decay", double_field(&RunConfig::ema_decay)},
      {"da_probability", double_field(&RunConfig::da_probability)},
      {"fa_probability", double_field(&RunConfig::fa_probability)},
      {"pool_size", int_field(&RunConfig::pool_size)},
      {"filter_fraction", double_field(&RunConfig::filter_fraction)},
      {"seed", int_field(&RunConfig::seed)},
      {"channel_multiplier", double_field(&RunConfig::channel_multiplier)},
      {"checkpoint_every", int_field(&RunConfig::checkpoint_every)},
      {"object_fake_term",
       {[](RunConfig& c, std::string_view k, std::string_view v) {
          if (v == "cross_entropy") {
            c.object_fake_term = FakeTermForm::kCrossEntropy;
          } else if (v == "literal") {
            c.object_fake_term = FakeTermForm::kLiteral;
          } else {
            bad_value(k, v);
          }
        },
        [](const RunConfig& c) {
          return std::string(c.object_fake_term == FakeTermForm::kLiteral ? "literal"
                                                                          : "cross_entropy");
        }}},
      {"da_xflip", bool_field(&RunConfig::da_xflip)},
      {"da_rotate90", bool_field(&RunConfig::da_rotate90)},
      {"da_translate_int", bool_field(&RunConfig::da_translate_int)},
      {"da_scale", bool_field(&RunConfig::da_scale)},
      {"da_translate_frac", bool_field(&RunConfig::da_translate_frac)},
      {"da_brightness", bool_field(&RunConfig::da_brightness)},
      {"da_contrast", bool_field(&RunConfig::da_contrast)},
      {"da_saturation", bool_field(&RunConfig::da_saturation)},
      {"da_hue", bool_field(&RunConfig::da_hue)},
      {"da_noise", bool_field(&RunConfig::da_noise)},
      {"da_cutout", bool_field(&RunConfig::da_cutout)},
  };
  return table;
}

const Field& find_field(std::string_view key) {
  for (const auto& [name, field] : field_table()) {
    if (name == key) return field;
  }
  throw std::invalid_argument("config: unknown key '" + std::string(key) + "'");
}

bool is_power_of_two(int64_t v) { return v > 0 && (v & (v - 1)) == 0; }

}  // namespace

std::string to_string(Resolution r) {
  return std::to_string(r.height) + "x" + std::to_string(r.width);
}

Resolution parse_resolution(std::string_view text) {
  const auto x = text.find('x');
  if (x == std::string_view::npos) {
    throw std::invalid_argument("resolution must look like HxW, got '" + std::string(text) + "'");
  }
  Resolution r;
  r.height = parse_int("resolution", text.substr(0, x));
  r.width = parse_int("resolution", text.substr(x + 1));
  if (r.height <= 0 || r.width <= 0) {
    throw std::invalid_argument("resolution must be positive, got '" + std::string(text) + "'");
  }
  return r;
}

int64_t RunConfig::upsampling_stages() const {
  if (base_grid.height <= 0 || resolution.height % base_grid.height != 0) return -1;
  const int64_t factor = resolution.height / base_grid.height;
  if (!is_power_of_two(factor) || base_grid.width * factor != resolution.width) return -1;
  int64_t stages = 0;
  for (int64_t f = factor; f > 1; f >>= 1) ++stages;
  return stages;
}

void RunConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("config: " + msg); };
  if (resolution.height <= 0 || resolution.width <= 0) fail("resolution must be positive");
  if (base_grid.height <= 0 || base_grid.width <= 0) fail("base_grid must be positive");
  const int64_t stages = upsampling_stages();
  if (stages < 0) {
    fail("resolution " + to_string(resolution) + " is not base_grid " + to_string(base_grid) +
         " times a power of two");
  }
  // Four image heads need at least three upsampling steps.
  if (stages < 3) fail("resolution needs at least 3 upsampling stages above base_grid");
  if (latent_dim <= 0) fail("latent_dim must be positive");
  if (n_lowlevel_blocks < 1 || n_lowlevel_blocks > 5) fail("n_lowlevel_blocks must be in 1..5");
  if (n_lowlevel_blocks > stages + 1) fail("n_lowlevel_blocks exceeds the resolution depth");
  if (p0_epochs < 0) fail("p0_epochs must be >= 0");
  if (total_epochs < 0) fail("total_epochs must be >= 0");
  if (p0_epochs > total_epochs) fail("p0_epochs must not exceed total_epochs");
  if (!(learning_rate > 0)) fail("learning_rate must be positive");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) fail("betas must be in [0,1)");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (!(ema_decay >= 0 && ema_decay <= 1)) fail("ema_decay must be in [0,1]");
  if (!(da_probability >= 0 && da_probability <= 1)) fail("da_probability must be in [0,1]");
  if (!(fa_probability >= 0 && fa_probability <= 1)) fail("fa_probability must be in [0,1]");
  if (pool_size < 1) fail("pool_size must be >= 1");
  if (!(filter_fraction >= 0 && filter_fraction < 1)) fail("filter_fraction must be in [0,1)");
  if (!(channel_multiplier > 0 && channel_multiplier <= 4)) {
    fail("channel_multiplier must be in (0,4]");
  }
  if (checkpoint_every < 1) fail("checkpoint_every must be >= 1");
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> out;
    for (const auto& [name, field] : field_table()) out.push_back(name);
    return out;
  }();
  return keys;
}

void set_config_value(RunConfig& config, std::string_view key, std::string_view value) {
  find_field(key).set(config, key, trim(value));
}

std::string get_config_value(const RunConfig& config, std::string_view key) {
  return find_field(key).get(config);
}

RunConfig parse_config(std::string_view text) {
  RunConfig config;
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view view = line;
    if (const auto hash = view.find('#'); hash != std::string_view::npos) {
      view = view.substr(0, hash);
    }
    view = trim(view);
    if (view.empty()) continue;
    const auto eq = view.find('=');
    if (eq == std::string_view::npos) {
      throw std::invalid_argument("config: line " + std::to_string(line_no) +
                                  " is not key=value");
    }
    set_config_value(config, trim(view.substr(0, eq)), trim(view.substr(eq + 1)));
  }
  return config;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open config file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

std::string serialize_config(const RunConfig& config) {
  std::string out;
  for (const auto& [name, field] : field_table()) {
    out += name + "=" + field.get(config) + "\n";
  }
  return out;
}

Resolution nearest_compatible_resolution(Resolution requested, Resolution base_grid) {
  if (requested.height < base_grid.height || requested.width < base_grid.width) {
    throw std::invalid_argument("requested resolution " + to_string(requested) +
                                " is smaller than base_grid " + to_string(base_grid));
  }
  int64_t factor = 1;
  while (base_grid.height * factor * 2 <= requested.height &&
         base_grid.width * factor * 2 <= requested.width) {
    factor *= 2;
  }
  return {base_grid.height * factor, base_grid.width * factor};
}

}  // namespace pairgen
