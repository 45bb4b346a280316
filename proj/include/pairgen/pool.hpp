#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "pairgen/checkpoint.hpp"
#include "pairgen/data.hpp"
#include "pairgen/evalkit.hpp"

namespace pairgen {

struct PoolEntry {
  int64_t sample_id = 0;  // 1..n; 0 is reserved for the real pair
  uint64_t latent_seed = 0;
  ImageMaskPair pair;
};

struct Pool {
  std::vector<PoolEntry> entries;
  std::string checkpoint_sha256;
  uint64_t seed = 0;
};

// n pairs from n distinct seeded latents through the EMA generator in hard
// mask mode. Throws on n < 1 and on a checkpoint/plan mismatch.
Pool build_pool(const Checkpoint& checkpoint, int64_t n, uint64_t seed,
                const std::string& checkpoint_sha256 = "");
Pool build_pool(const std::filesystem::path& checkpoint_path, int64_t n, uint64_t seed);

// Directory form: images/<id>.png, masks/<id>.png, pool.tsv.
void save_pool(const Pool& pool, const std::filesystem::path& dir);
Pool load_pool(const std::filesystem::path& dir);

struct RankEntry {
  int64_t sample_id = 0;
  SifidReport sifid;
  std::array<int64_t, 4> rank{};
  double avg_rank = 0.0;
  bool kept = true;
};

struct PoolRanking {
  std::vector<RankEntry> entries;  // in sample_id order
  double eta = 0.0;
  int64_t dropped = 0;

  std::vector<int64_t> kept_ids() const;
};

// ceil(eta * n), robust to the float error in products like 0.15 * 100.
int64_t drop_count(double eta, int64_t n);

// Ranks precomputed SIFID reports: per tap, ascending SIFID with sample_id
// breaking ties gives ranks 1..n; avg_rank is their mean; the drop_count
// entries with the largest (avg_rank, sample_id) are dropped.
PoolRanking rank_pool(const std::vector<SifidReport>& reports, double eta);

PoolRanking filter_pool(const Pool& pool, const torch::Tensor& real_image, double eta,
                        FeatureExtractor& extractor = FeatureExtractor::shared());

void save_ranking(const PoolRanking& ranking, const std::filesystem::path& path);
PoolRanking load_ranking(const std::filesystem::path& path);

struct ManifestRow {
  int64_t id = 0;
  std::string source;  // "real" or "synthetic"
  int64_t sample_id = 0;
  double avg_rank = 0.0;
  std::string checkpoint_sha256;
};

std::string format_id(int64_t id);

// Writes the real pair under id 0 and every kept entry under ids 1..k in
// sample_id order, plus manifest.tsv. Refuses an existing non-empty
// out_dir unless `overwrite`.
std::vector<ManifestRow> export_augmentation(const PoolRanking& ranking, const Pool& pool,
                                             const ImageMaskPair& real,
                                             const std::filesystem::path& out_dir,
                                             bool overwrite = false);

}  // namespace pairgen
