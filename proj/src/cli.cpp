#include "pairgen/cli.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "pairgen/checkpoint.hpp"
#include "pairgen/config.hpp"
#include "pairgen/data.hpp"
#include "pairgen/evalkit.hpp"
#include "pairgen/pool.hpp"
#include "pairgen/render.hpp"
#include "pairgen/training.hpp"

namespace pairgen {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Common {
  std::string config_path;
  std::optional<uint64_t> seed;
  std::string out;
  bool dry_run = false;
  std::map<std::string, std::string> overrides;
};

void add_common(CLI::App* cmd, Common& c, bool with_config_keys) {
  cmd->add_option("--config", c.config_path, "key=value run configuration file");
  cmd->add_option("--seed", c.seed, "random seed");
  cmd->add_option("--out", c.out, "output location");
  cmd->add_flag("--dry-run", c.dry_run, "print the plan and write nothing");
  if (!with_config_keys) return;
  for (const auto& key : config_keys()) {
    if (key == "seed") continue;
    cmd->add_option("--" + key, c.overrides[key], "override config key " + key);
  }
}

RunConfig resolve_config(const Common& c, CLI::App* cmd) {
  RunConfig config;
  if (!c.config_path.empty()) {
    if (!fs::exists(c.config_path)) throw UsageError("config file not found: " + c.config_path);
    config = load_config(c.config_path);
  }
  if (c.seed) config.seed = *c.seed;
  for (const auto& [key, value] : c.overrides) {
    if (cmd->count("--" + key) == 0) continue;
    try {
      set_config_value(config, key, value);
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
  }
  try {
    config.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  return config;
}

void require_file(const std::string& path, const char* flag) {
  if (path.empty()) throw UsageError(std::string("missing required ") + flag);
  if (!fs::exists(path)) throw UsageError(std::string(flag) + " not found: " + path);
}

void require_out(const Common& c) {
  if (c.out.empty()) throw UsageError("missing required --out");
}

json config_json(const RunConfig& config) {
  json j = json::object();
  for (const auto& key : config_keys()) j[key] = get_config_value(config, key);
  return j;
}

void emit(std::ostream& out, const json& j) { out << j.dump() << "\n"; }

json dry_run_record(const std::string& command, const std::vector<std::string>& artifacts,
                    json extra = json::object()) {
  json j = {{"command", command}, {"dry_run", true}, {"artifacts", artifacts}};
  for (auto& [k, v] : extra.items()) j[k] = v;
  return j;
}

json nullable(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

// --- train -----------------------------------------------------------------

struct TrainArgs {
  Common common;
  std::string image, mask;
  int64_t log_every = 0;
};

int cmd_train(TrainArgs& a, CLI::App* cmd, std::ostream& out) {
  auto config = resolve_config(a.common, cmd);
  require_file(a.image, "--image");
  require_file(a.mask, "--mask");
  require_out(a.common);
  auto pair = load_pair(a.image, a.mask);
  const bool fitted = pair.height() != config.resolution.height ||
                      pair.width() != config.resolution.width;
  const fs::path dir = a.common.out;

  std::vector<std::string> artifacts{(dir / "config.cfg").string(), (dir / "losses.tsv").string()};
  for (int64_t e = config.checkpoint_every; e < config.total_epochs; e += config.checkpoint_every) {
    artifacts.push_back(checkpoint_path(dir, e).string());
  }
  artifacts.push_back(checkpoint_path(dir, config.total_epochs).string());
  if (a.common.dry_run) {
    emit(out, dry_run_record("train", artifacts,
                             {{"config", config_json(config)},
                              {"input_resolution", to_string(Resolution{pair.height(), pair.width()})},
                              {"fitted", fitted},
                              {"num_classes", pair.num_classes}}));
    return kExitOk;
  }
  if (fitted) pair = fit_pair(pair, config.resolution);

  fs::create_directories(dir);
  {
    std::ofstream cfg(dir / "config.cfg", std::ios::trunc);
    cfg << serialize_config(config);
    if (!cfg) throw std::runtime_error("cannot write " + (dir / "config.cfg").string());
  }
  TrainOptions options;
  options.out_dir = dir;
  if (a.log_every > 0) {
    options.on_report = [&](const LossReport& r) {
      if ((r.epoch + 1) % a.log_every != 0) return;
      emit(out, {{"epoch", r.epoch + 1}, {"mode", to_string(r.mode)}, {"d_total", r.d_total},
                 {"g_total", r.g_total}});
    };
  }
  try {
    auto reports = train(pair, config, options);
    json j = {{"command", "train"}, {"epochs", config.total_epochs}, {"artifacts", artifacts},
              {"fitted", fitted}};
    if (!reports.empty()) {
      j["final_d_total"] = reports.back().d_total;
      j["final_g_total"] = reports.back().g_total;
    }
    emit(out, j);
  } catch (const TrainingDiverged& e) {
    throw std::runtime_error(std::string(e.what()) + "; last checkpoint kept in " +
                             (dir / "checkpoints").string());
  }
  for (const auto& p : artifacts) {
    if (!fs::exists(p)) throw std::runtime_error("artifact missing after training: " + p);
  }
  return kExitOk;
}

// --- generate --------------------------------------------------------------

struct GenerateArgs {
  Common common;
  std::string checkpoint;
  std::optional<int64_t> n;
  int64_t grid = 16;
};

int cmd_generate(GenerateArgs& a, std::ostream& out) {
  require_file(a.checkpoint, "--checkpoint");
  require_out(a.common);
  auto ck = load_checkpoint(a.checkpoint);
  const int64_t n = a.n.value_or(ck.config.pool_size);
  const uint64_t seed = a.common.seed.value_or(ck.config.seed);
  if (n < 1) throw UsageError("--n must be at least 1");
  const fs::path dir = a.common.out;
  std::vector<std::string> artifacts{(dir / "pool.tsv").string(), (dir / "images").string(),
                                     (dir / "masks").string(), (dir / "grid.png").string(),
                                     (dir / "overlays.png").string()};
  if (a.common.dry_run) {
    emit(out, dry_run_record("generate", artifacts, {{"n", n}, {"seed", seed}}));
    return kExitOk;
  }
  auto pool = build_pool(ck, n, seed, sha256_file(a.checkpoint));
  save_pool(pool, dir);
  std::vector<torch::Tensor> images, overlays;
  for (const auto& e : pool.entries) {
    if (static_cast<int64_t>(images.size()) >= a.grid) break;
    images.push_back(image_to_rgb8(e.pair.image).permute({2, 0, 1}).contiguous());
    overlays.push_back(overlay_mask(e.pair.image, e.pair.mask));
  }
  const int64_t cols = std::max<int64_t>(1, static_cast<int64_t>(std::ceil(std::sqrt(images.size()))));
  save_rgb8(dir / "grid.png", tile_grid(images, cols));
  save_rgb8(dir / "overlays.png", tile_grid(overlays, cols));
  emit(out, {{"command", "generate"}, {"n", n}, {"seed", seed},
             {"checkpoint_sha256", pool.checkpoint_sha256}, {"artifacts", artifacts}});
  return kExitOk;
}

// --- evaluate --------------------------------------------------------------

struct EvaluateArgs {
  Common common;
  std::string pool, real, real_mask;
  int64_t segmenter_epochs = 500;
  std::optional<int64_t> lpips_pairs;
};

// A pool directory, or a plain directory of images numbered in name order.
Pool load_any_pool(const fs::path& dir) {
  if (fs::exists(dir / "pool.tsv")) return load_pool(dir);
  const fs::path images = fs::is_directory(dir / "images") ? dir / "images" : dir;
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(images)) {
    const auto ext = e.path().extension().string();
    if (ext == ".png" || ext == ".jpg" || ext == ".jpeg") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  Pool pool;
  int64_t id = 1;
  for (const auto& f : files) {
    PoolEntry e;
    e.sample_id = id++;
    e.pair.image = load_image(f);
    pool.entries.push_back(std::move(e));
  }
  return pool;
}

int cmd_evaluate(EvaluateArgs& a, std::ostream& out) {
  if (a.pool.empty()) throw UsageError("missing required --pool");
  if (!fs::is_directory(a.pool)) throw UsageError("--pool not a directory: " + a.pool);
  require_file(a.real, "--real");
  if (!a.real_mask.empty()) require_file(a.real_mask, "--real-mask");
  require_out(a.common);
  if (a.segmenter_epochs < 1) throw UsageError("--segmenter-epochs must be at least 1");
  const fs::path dir = a.common.out;
  std::vector<std::string> artifacts{(dir / "eval.jsonl").string(), (dir / "summary.txt").string()};
  if (a.common.dry_run) {
    emit(out, dry_run_record("evaluate", artifacts));
    return kExitOk;
  }

  auto pool = load_any_pool(a.pool);
  if (pool.entries.empty()) throw std::runtime_error("no images in " + a.pool);
  auto real_image = load_image(a.real);
  auto& extractor = FeatureExtractor::shared();
  const auto real_fits = fit_taps(extractor, real_image);

  std::vector<json> records;
  std::array<double, 4> sifid_sum{};
  std::vector<torch::Tensor> images;
  for (const auto& e : pool.entries) {
    auto r = sifid_report(real_fits, e.pair.image, e.sample_id, extractor);
    for (int l = 0; l < 4; ++l) sifid_sum[l] += r.per_layer[l];
    records.push_back({{"sample_id", e.sample_id},
                       {"sifid", r.per_layer},
                       {"sifid_regularized", r.regularized},
                       {"lpips", nullptr},
                       {"miou", nullptr}});
    images.push_back(e.pair.image);
  }
  const double count = static_cast<double>(pool.entries.size());
  std::array<double, 4> sifid_mean{};
  for (int l = 0; l < 4; ++l) sifid_mean[l] = sifid_sum[l] / count;

  json summary = {{"summary", true},
                  {"samples", pool.entries.size()},
                  {"sifid", sifid_mean},
                  {"extractor_weights_sha256", extractor.info().weights_sha256},
                  {"extractor_weights", extractor.info().weights_source},
                  {"resize", extractor.info().resize},
                  {"extractor_input", to_string(extractor.info().input)}};
  if (images.size() >= 2) {
    auto l = lpips_diversity(images, a.lpips_pairs, a.common.seed.value_or(0), extractor);
    summary["lpips"] = l.mean;
    summary["lpips_pairs"] = l.pairs;
    summary["lpips_exhaustive"] = l.exhaustive;
  } else {
    summary["lpips"] = nullptr;
  }
  const bool have_masks = !a.real_mask.empty() && pool.entries.front().pair.mask.defined();
  if (have_masks) {
    auto reference = make_pair(real_image, load_mask(a.real_mask));
    std::vector<ImageMaskPair> generated;
    for (const auto& e : pool.entries) {
      auto p = e.pair;
      if (p.image.size(1) != reference.height() || p.image.size(2) != reference.width()) {
        p = fit_pair(p, {reference.height(), reference.width()});
      }
      p.num_classes = reference.num_classes;
      generated.push_back(p);
    }
    AlignmentOptions options;
    options.segmenter.epochs = a.segmenter_epochs;
    options.segmenter.seed = a.common.seed.value_or(0);
    auto score = alignment_miou(generated, reference, options);
    summary["miou"] = score.miou;
    summary["unaugmented_miou"] = score.unaugmented_miou;
    std::vector<json> per_class;
    for (double v : score.per_class_iou) per_class.push_back(nullable(v));
    summary["per_class_iou"] = per_class;
    summary["views"] = score.views;
  } else {
    summary["miou"] = nullptr;
  }

  fs::create_directories(dir);
  {
    std::ofstream f(dir / "eval.jsonl", std::ios::trunc);
    for (const auto& r : records) f << r.dump() << "\n";
    f << summary.dump() << "\n";
    if (!f) throw std::runtime_error("cannot write " + (dir / "eval.jsonl").string());
  }
  {
    std::ofstream f(dir / "summary.txt", std::ios::trunc);
    char line[256];
    f << "samples      " << pool.entries.size() << "\n";
    for (int l = 0; l < 4; ++l) {
      std::snprintf(line, sizeof(line), "sifid-%d      %.6f\n", l + 1, sifid_mean[l]);
      f << line;
    }
    f << "lpips        " << (summary["lpips"].is_null() ? "n/a" : std::to_string(summary["lpips"].get<double>()))
      << "\n";
    f << "miou         " << (summary["miou"].is_null() ? "n/a" : std::to_string(summary["miou"].get<double>()))
      << "\n";
    f << "extractor    " << extractor.info().weights_source << " " << extractor.info().weights_sha256
      << " (" << extractor.info().resize << " to " << to_string(extractor.info().input) << ")\n";
    if (!f) throw std::runtime_error("cannot write " + (dir / "summary.txt").string());
  }
  summary["command"] = "evaluate";
  summary["artifacts"] = artifacts;
  emit(out, summary);
  return kExitOk;
}

// --- filter-pool -----------------------------------------------------------

struct FilterArgs {
  Common common;
  std::string pool, real;
  std::optional<double> eta;
};

int cmd_filter(FilterArgs& a, std::ostream& out) {
  if (a.pool.empty()) throw UsageError("missing required --pool");
  if (!fs::exists(fs::path(a.pool) / "pool.tsv")) throw UsageError("no pool.tsv in " + a.pool);
  require_file(a.real, "--real");
  require_out(a.common);
  RunConfig config;
  if (!a.common.config_path.empty()) config = load_config(a.common.config_path);
  const double eta = a.eta.value_or(config.filter_fraction);
  if (!(eta >= 0.0 && eta < 1.0)) throw UsageError("--eta must be in [0, 1)");
  const fs::path file = fs::path(a.common.out) / "ranking.tsv";
  if (a.common.dry_run) {
    emit(out, dry_run_record("filter-pool", {file.string()}, {{"eta", eta}}));
    return kExitOk;
  }
  auto pool = load_pool(a.pool);
  auto ranking = filter_pool(pool, load_image(a.real), eta);
  save_ranking(ranking, file);
  const auto kept = ranking.kept_ids();
  emit(out, {{"command", "filter-pool"}, {"eta", eta}, {"n", ranking.entries.size()},
             {"kept", kept.size()}, {"dropped", ranking.dropped}, {"artifacts", {file.string()}}});
  return kExitOk;
}

// --- export-aug ------------------------------------------------------------

struct ExportArgs {
  Common common;
  std::string ranking, pool, real, real_mask;
  bool overwrite = false;
};

int cmd_export(ExportArgs& a, std::ostream& out) {
  require_file(a.ranking, "--ranking");
  if (a.pool.empty()) throw UsageError("missing required --pool");
  require_file(a.real, "--real");
  require_file(a.real_mask, "--real-mask");
  require_out(a.common);
  const fs::path dir = a.common.out;
  if (fs::exists(dir) && !fs::is_empty(dir) && !a.overwrite) {
    throw std::runtime_error("export directory " + dir.string() +
                             " exists; pass --overwrite to replace it");
  }
  auto ranking = load_ranking(a.ranking);
  const auto kept = ranking.kept_ids();
  std::vector<std::string> artifacts{(dir / "manifest.tsv").string()};
  if (a.common.dry_run) {
    emit(out, dry_run_record("export-aug", artifacts, {{"pairs", kept.size() + 1}}));
    return kExitOk;
  }
  auto pool = load_pool(a.pool);
  auto real = load_pair(a.real, a.real_mask);
  auto rows = export_augmentation(ranking, pool, real, dir, a.overwrite);
  emit(out, {{"command", "export-aug"}, {"pairs", rows.size()}, {"artifacts", artifacts}});
  return kExitOk;
}

// --- report ----------------------------------------------------------------

struct ReportArgs {
  Common common;
  std::vector<std::string> runs;
};

std::optional<std::string> last_line(const fs::path& path) {
  std::ifstream f(path);
  if (!f) return std::nullopt;
  std::string line, last;
  while (std::getline(f, line))
    if (!line.empty()) last = line;
  if (last.empty()) return std::nullopt;
  return last;
}

int cmd_report(ReportArgs& a, std::ostream& out) {
  if (a.runs.empty()) throw UsageError("report needs at least one run directory");
  for (const auto& r : a.runs) {
    if (!fs::is_directory(r)) throw UsageError("not a directory: " + r);
  }
  std::vector<std::string> artifacts;
  if (!a.common.out.empty()) {
    artifacts = {(fs::path(a.common.out) / "report.txt").string(),
                 (fs::path(a.common.out) / "report.jsonl").string()};
  }
  if (a.common.dry_run) {
    emit(out, dry_run_record("report", artifacts, {{"runs", a.runs}}));
    return kExitOk;
  }

  std::ostringstream text;
  std::vector<json> rows;
  char buf[512];
  std::snprintf(buf, sizeof(buf), "%-32s %8s %10s %10s %10s %10s %10s %8s %8s\n", "run", "epoch",
                "d_total", "g_total", "sifid-1", "sifid-4", "lpips", "miou", "kept");
  text << buf;
  for (const auto& r : a.runs) {
    const fs::path dir = r;
    json row = {{"run", r}};
    if (auto l = last_line(dir / "losses.tsv"); l && (*l)[0] != 'e') {
      std::stringstream ss(*l);
      std::vector<std::string> cells;
      std::string c;
      while (std::getline(ss, c, '\t')) cells.push_back(c);
      if (cells.size() == 10) {
        row["epoch"] = std::stoll(cells[0]) + 1;
        row["d_total"] = std::stod(cells[5]);
        row["g_total"] = std::stod(cells[9]);
      }
    }
    if (auto l = last_line(dir / "eval.jsonl")) {
      auto j = json::parse(*l, nullptr, false);
      if (!j.is_discarded() && j.contains("summary")) {
        row["sifid"] = j["sifid"];
        row["lpips"] = j["lpips"];
        row["miou"] = j["miou"];
      }
    }
    if (fs::exists(dir / "ranking.tsv")) {
      auto ranking = load_ranking(dir / "ranking.tsv");
      row["kept"] = ranking.kept_ids().size();
    }
    auto num = [&](const char* key, int idx = -1) -> std::string {
      if (!row.contains(key) || row[key].is_null()) return "-";
      const auto& v = idx >= 0 ? row[key][idx] : row[key];
      char cell[32];
      if (v.is_number_integer()) {
        std::snprintf(cell, sizeof(cell), "%lld", static_cast<long long>(v.get<int64_t>()));
      } else {
        std::snprintf(cell, sizeof(cell), "%.4f", v.get<double>());
      }
      return cell;
    };
    std::snprintf(buf, sizeof(buf), "%-32s %8s %10s %10s %10s %10s %10s %8s %8s\n", r.c_str(),
                  num("epoch").c_str(), num("d_total").c_str(), num("g_total").c_str(),
                  num("sifid", 0).c_str(), num("sifid", 3).c_str(), num("lpips").c_str(),
                  num("miou").c_str(), num("kept").c_str());
    text << buf;
    rows.push_back(row);
  }
  out << text.str();
  if (!a.common.out.empty()) {
    fs::create_directories(a.common.out);
    std::ofstream t(artifacts[0], std::ios::trunc);
    t << text.str();
    std::ofstream j(artifacts[1], std::ios::trunc);
    for (const auto& row : rows) j << row.dump() << "\n";
    if (!t || !j) throw std::runtime_error("cannot write report in " + a.common.out);
  }
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Joint image and segmentation-mask synthesis from a single pair", "pairgen"};
  app.require_subcommand(1);

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "train on one image-mask pair");
  add_common(train_cmd, train_args.common, true);
  train_cmd->add_option("--image", train_args.image, "RGB training image");
  train_cmd->add_option("--mask", train_args.mask, "indexed label map");
  train_cmd->add_option("--log-every", train_args.log_every, "print losses every k epochs");

  GenerateArgs gen_args;
  auto* gen_cmd = app.add_subcommand("generate", "sample a pool of pairs from a checkpoint");
  add_common(gen_cmd, gen_args.common, false);
  gen_cmd->add_option("--checkpoint", gen_args.checkpoint, "checkpoint file");
  gen_cmd->add_option("--n", gen_args.n, "number of samples (default: pool_size)");
  gen_cmd->add_option("--grid", gen_args.grid, "samples shown in the preview grids");

  EvaluateArgs eval_args;
  auto* eval_cmd = app.add_subcommand("evaluate", "SIFID, LPIPS diversity and alignment mIoU");
  add_common(eval_cmd, eval_args.common, false);
  eval_cmd->add_option("--pool", eval_args.pool, "pool directory or directory of images");
  eval_cmd->add_option("--real", eval_args.real, "real image");
  eval_cmd->add_option("--real-mask", eval_args.real_mask, "real label map (enables mIoU)");
  eval_cmd->add_option("--segmenter-epochs", eval_args.segmenter_epochs, "segmenter epochs");
  eval_cmd->add_option("--lpips-pairs", eval_args.lpips_pairs, "random pairs instead of all");

  FilterArgs filter_args;
  auto* filter_cmd = app.add_subcommand("filter-pool", "rank a pool by multi-layer SIFID");
  add_common(filter_cmd, filter_args.common, false);
  filter_cmd->add_option("--pool", filter_args.pool, "pool directory");
  filter_cmd->add_option("--real", filter_args.real, "real image");
  filter_cmd->add_option("--eta", filter_args.eta, "fraction to drop (default: filter_fraction)");

  ExportArgs export_args;
  auto* export_cmd = app.add_subcommand("export-aug", "write kept pairs plus the real pair");
  add_common(export_cmd, export_args.common, false);
  export_cmd->add_option("--ranking", export_args.ranking, "ranking.tsv from filter-pool");
  export_cmd->add_option("--pool", export_args.pool, "pool directory");
  export_cmd->add_option("--real", export_args.real, "real image");
  export_cmd->add_option("--real-mask", export_args.real_mask, "real label map");
  export_cmd->add_flag("--overwrite", export_args.overwrite, "replace an existing export");

  ReportArgs report_args;
  auto* report_cmd = app.add_subcommand("report", "summarise run directories");
  add_common(report_cmd, report_args.common, false);
  report_cmd->add_option("runs", report_args.runs, "run directories");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (train_cmd->parsed()) return cmd_train(train_args, train_cmd, out);
    if (gen_cmd->parsed()) return cmd_generate(gen_args, out);
    if (eval_cmd->parsed()) return cmd_evaluate(eval_args, out);
    if (filter_cmd->parsed()) return cmd_filter(filter_args, out);
    if (export_cmd->parsed()) return cmd_export(export_args, out);
    if (report_cmd->parsed()) return cmd_report(report_args, out);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    err << "error: " << msg << "\n";
    return kExitFailure;
  }
  err << "usage error: no command\n";
  return kExitUsage;
}

}  // namespace pairgen
