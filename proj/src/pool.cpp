#include "pairgen/pool.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include <ATen/CPUGeneratorImpl.h>

#include "pairgen/rng.hpp"
#include "pairgen/training.hpp"

namespace pairgen {
namespace {

constexpr int64_t kGenerateBatch = 8;

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, '\t')) out.push_back(cell);
  return out;
}

}  // namespace

Pool build_pool(const Checkpoint& checkpoint, int64_t n, uint64_t seed,
                const std::string& checkpoint_sha256) {
  if (n < 1) throw std::invalid_argument("build_pool: n must be at least 1, got " + std::to_string(n));
  auto g = load_generator(checkpoint, true);
  const int64_t latent = g->plan().latent_dim;
  const int64_t classes = g->plan().num_classes;

  Pool pool;
  pool.seed = seed;
  pool.checkpoint_sha256 = checkpoint_sha256;
  Rng master(seed);
  std::vector<uint64_t> seeds(n);
  std::vector<torch::Tensor> zs;
  for (int64_t i = 0; i < n; ++i) {
    seeds[i] = master.next_seed();
    auto gen = at::make_generator<at::CPUGeneratorImpl>(seeds[i]);
    zs.push_back(torch::randn({latent}, gen));
  }

  torch::NoGradGuard no_grad;
  for (int64_t start = 0; start < n; start += kGenerateBatch) {
    const int64_t end = std::min(n, start + kGenerateBatch);
    auto z = torch::stack(std::vector<torch::Tensor>(zs.begin() + start, zs.begin() + end));
    auto out = generate(g, z, MaskMode::kHard);
    auto labels = one_hot_to_labels(out.hard_mask);
    for (int64_t i = start; i < end; ++i) {
      PoolEntry e;
      e.sample_id = i + 1;
      e.latent_seed = seeds[i];
      e.pair.image = out.images.front()[i - start].clamp(-1.0, 1.0).contiguous();
      e.pair.mask = labels[i - start].contiguous();
      e.pair.num_classes = classes;
      pool.entries.push_back(std::move(e));
    }
  }
  return pool;
}

Pool build_pool(const std::filesystem::path& checkpoint_path, int64_t n, uint64_t seed) {
  return build_pool(load_checkpoint(checkpoint_path), n, seed, sha256_file(checkpoint_path));
}

std::string format_id(int64_t id) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%04lld", static_cast<long long>(id));
  return buf;
}

void save_pool(const Pool& pool, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "images");
  std::filesystem::create_directories(dir / "masks");
  std::ofstream out(dir / "pool.tsv", std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + (dir / "pool.tsv").string());
  const int64_t classes = pool.entries.empty() ? 0 : pool.entries.front().pair.num_classes;
  out << "# checkpoint_sha256\t" << pool.checkpoint_sha256 << "\n";
  out << "# seed\t" << pool.seed << "\n";
  out << "# num_classes\t" << classes << "\n";
  out << "sample_id\tlatent_seed\n";
  for (const auto& e : pool.entries) {
    const auto id = format_id(e.sample_id);
    save_pair(dir / "images" / (id + ".png"), dir / "masks" / (id + ".png"), e.pair);
    out << e.sample_id << "\t" << e.latent_seed << "\n";
  }
  if (!out) throw std::runtime_error("failed writing " + (dir / "pool.tsv").string());
}

Pool load_pool(const std::filesystem::path& dir) {
  std::ifstream in(dir / "pool.tsv");
  if (!in) throw std::runtime_error("no pool.tsv in " + dir.string());
  Pool pool;
  int64_t classes = 0;
  std::string line;
  bool header_seen = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto cells = split_tabs(line);
    if (line[0] == '#') {
      if (cells.size() < 2) continue;
      if (cells[0] == "# checkpoint_sha256") pool.checkpoint_sha256 = cells[1];
      if (cells[0] == "# seed") pool.seed = std::stoull(cells[1]);
      if (cells[0] == "# num_classes") classes = std::stoll(cells[1]);
      continue;
    }
    if (!header_seen) {
      header_seen = true;
      continue;
    }
    if (cells.size() != 2) throw std::runtime_error("malformed pool.tsv row: " + line);
    PoolEntry e;
    e.sample_id = std::stoll(cells[0]);
    e.latent_seed = std::stoull(cells[1]);
    const auto id = format_id(e.sample_id);
    e.pair.image = load_image(dir / "images" / (id + ".png"));
    e.pair.mask = load_mask(dir / "masks" / (id + ".png"));
    e.pair.num_classes = classes;
    if (e.pair.mask.numel() && e.pair.mask.max().item<int64_t>() >= classes) {
      throw std::runtime_error("pool mask " + id + " has labels outside 0.." +
                               std::to_string(classes - 1));
    }
    pool.entries.push_back(std::move(e));
  }
  return pool;
}

std::vector<int64_t> PoolRanking::kept_ids() const {
  std::vector<int64_t> ids;
  for (const auto& e : entries)
    if (e.kept) ids.push_back(e.sample_id);
  return ids;
}

int64_t drop_count(double eta, int64_t n) {
  if (!(eta >= 0.0 && eta < 1.0)) throw std::invalid_argument("eta must be in [0, 1)");
  return static_cast<int64_t>(std::ceil(eta * static_cast<double>(n) - 1e-9));
}

PoolRanking rank_pool(const std::vector<SifidReport>& reports, double eta) {
  if (reports.empty()) throw std::invalid_argument("rank_pool: empty pool");
  const int64_t n = static_cast<int64_t>(reports.size());
  PoolRanking ranking;
  ranking.eta = eta;
  ranking.dropped = drop_count(eta, n);

  std::vector<std::size_t> by_id(reports.size());
  std::iota(by_id.begin(), by_id.end(), 0);
  std::sort(by_id.begin(), by_id.end(),
            [&](std::size_t a, std::size_t b) { return reports[a].sample_id < reports[b].sample_id; });
  for (std::size_t k = 1; k < by_id.size(); ++k) {
    if (reports[by_id[k]].sample_id == reports[by_id[k - 1]].sample_id) {
      throw std::invalid_argument("rank_pool: duplicate sample_id " +
                                  std::to_string(reports[by_id[k]].sample_id));
    }
  }
  for (std::size_t i : by_id) {
    RankEntry e;
    e.sample_id = reports[i].sample_id;
    e.sifid = reports[i];
    ranking.entries.push_back(e);
  }

  auto& entries = ranking.entries;
  std::vector<std::size_t> order(entries.size());
  for (int l = 0; l < 4; ++l) {
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      const double sa = entries[a].sifid.per_layer[l], sb = entries[b].sifid.per_layer[l];
      if (sa != sb) return sa < sb;
      return entries[a].sample_id < entries[b].sample_id;
    });
    for (std::size_t r = 0; r < order.size(); ++r) entries[order[r]].rank[l] = static_cast<int64_t>(r) + 1;
  }
  for (auto& e : entries) {
    e.avg_rank = static_cast<double>(e.rank[0] + e.rank[1] + e.rank[2] + e.rank[3]) / 4.0;
  }
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (entries[a].avg_rank != entries[b].avg_rank) return entries[a].avg_rank > entries[b].avg_rank;
    return entries[a].sample_id > entries[b].sample_id;
  });
  for (int64_t k = 0; k < ranking.dropped; ++k) entries[order[k]].kept = false;
  return ranking;
}

PoolRanking filter_pool(const Pool& pool, const torch::Tensor& real_image, double eta,
                        FeatureExtractor& extractor) {
  if (pool.entries.empty()) throw std::invalid_argument("filter_pool: empty pool");
  drop_count(eta, 1);
  const auto real = fit_taps(extractor, real_image);
  std::vector<SifidReport> reports;
  reports.reserve(pool.entries.size());
  for (const auto& e : pool.entries) {
    reports.push_back(sifid_report(real, e.pair.image, e.sample_id, extractor));
  }
  return rank_pool(reports, eta);
}

void save_ranking(const PoolRanking& ranking, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "# eta\t" << fmt17(ranking.eta) << "\n";
  out << "# dropped\t" << ranking.dropped << "\n";
  out << "sample_id\tsifid1\tsifid2\tsifid3\tsifid4\trank1\trank2\trank3\trank4\tavg_rank\tkept\n";
  for (const auto& e : ranking.entries) {
    out << e.sample_id;
    for (double s : e.sifid.per_layer) out << "\t" << fmt17(s);
    for (int64_t r : e.rank) out << "\t" << r;
    out << "\t" << fmt17(e.avg_rank) << "\t" << (e.kept ? 1 : 0) << "\n";
  }
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

PoolRanking load_ranking(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read ranking " + path.string());
  PoolRanking ranking;
  std::string line;
  bool header_seen = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto cells = split_tabs(line);
    if (line[0] == '#') {
      if (cells.size() >= 2 && cells[0] == "# eta") ranking.eta = std::stod(cells[1]);
      if (cells.size() >= 2 && cells[0] == "# dropped") ranking.dropped = std::stoll(cells[1]);
      continue;
    }
    if (!header_seen) {
      header_seen = true;
      continue;
    }
    if (cells.size() != 11) throw std::runtime_error("malformed ranking row: " + line);
    RankEntry e;
    e.sample_id = std::stoll(cells[0]);
    e.sifid.sample_id = e.sample_id;
    for (int l = 0; l < 4; ++l) e.sifid.per_layer[l] = std::stod(cells[1 + l]);
    for (int l = 0; l < 4; ++l) e.rank[l] = std::stoll(cells[5 + l]);
    e.avg_rank = std::stod(cells[9]);
    e.kept = cells[10] == "1";
    ranking.entries.push_back(e);
  }
  return ranking;
}

std::vector<ManifestRow> export_augmentation(const PoolRanking& ranking, const Pool& pool,
                                             const ImageMaskPair& real,
                                             const std::filesystem::path& out_dir, bool overwrite) {
  const auto kept = ranking.kept_ids();
  if (kept.empty()) throw std::invalid_argument("export_augmentation: no kept entries");
  if (std::filesystem::exists(out_dir) && !std::filesystem::is_empty(out_dir)) {
    if (!overwrite) {
      throw std::runtime_error("export directory " + out_dir.string() +
                               " exists; pass the overwrite flag to replace it");
    }
    std::filesystem::remove_all(out_dir);
  }
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "images", ec);
  std::filesystem::create_directories(out_dir / "masks", ec);
  if (ec || !std::filesystem::is_directory(out_dir / "masks")) {
    throw std::runtime_error("cannot create export directory " + out_dir.string());
  }

  std::vector<ManifestRow> rows;
  auto write = [&](const ManifestRow& row, const ImageMaskPair& pair) {
    const auto id = format_id(row.id);
    save_pair(out_dir / "images" / (id + ".png"), out_dir / "masks" / (id + ".png"), pair);
    rows.push_back(row);
  };
  write({0, "real", 0, 0.0, pool.checkpoint_sha256}, real);
  int64_t next = 1;
  for (const auto& e : ranking.entries) {
    if (!e.kept) continue;
    auto it = std::find_if(pool.entries.begin(), pool.entries.end(),
                           [&](const PoolEntry& p) { return p.sample_id == e.sample_id; });
    if (it == pool.entries.end()) {
      throw std::invalid_argument("ranking names sample " + std::to_string(e.sample_id) +
                                  " which is not in the pool");
    }
    write({next++, "synthetic", e.sample_id, e.avg_rank, pool.checkpoint_sha256}, it->pair);
  }

  std::ofstream out(out_dir / "manifest.tsv", std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write manifest in " + out_dir.string());
  out << "id\tsource\tsample_id\tavg_rank\tcheckpoint_sha256\n";
  for (const auto& r : rows) {
    out << format_id(r.id) << "\t" << r.source << "\t" << r.sample_id << "\t" << fmt17(r.avg_rank)
        << "\t" << r.checkpoint_sha256 << "\n";
  }
  if (!out) throw std::runtime_error("failed writing manifest in " + out_dir.string());
  return rows;
}

}  // namespace pairgen
