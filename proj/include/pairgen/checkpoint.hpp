#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>

#include <torch/torch.h>

#include "pairgen/config.hpp"

namespace pairgen {

inline constexpr std::string_view kCheckpointFormat = "pairgen-checkpoint/1";

// Named numeric arrays plus the run configuration they were produced with.
//
// On-disk layout:
//   "<format>\n"
//   u64 little-endian header length
//   JSON header {config, epoch, metadata, arrays: [{name, dtype, shape, offset, bytes}]}
//   raw array bytes, in header order
struct Checkpoint {
  RunConfig config;
  int64_t epoch = 0;
  std::map<std::string, std::string> metadata;
  std::map<std::string, torch::Tensor> arrays;
};

// Writes through a temporary file and renames, so an interrupted save never
// clobbers the previous checkpoint.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);

// Throws std::runtime_error on a format-version mismatch or a truncated file.
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Parameters and buffers of `module` stored under "<prefix>/<name>".
void store_module(Checkpoint& checkpoint, const std::string& prefix,
                  const torch::nn::Module& module);

// Every parameter and buffer must be present with a matching shape.
void restore_module(const Checkpoint& checkpoint, const std::string& prefix,
                    torch::nn::Module& module);

std::string sha256_file(const std::filesystem::path& path);
std::string sha256_bytes(std::string_view bytes);

}  // namespace pairgen
