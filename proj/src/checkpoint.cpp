#include "pairgen/checkpoint.hpp"

#include <array>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <openssl/evp.h>

#include "json.hpp"

namespace pairgen {
namespace {

using json = nlohmann::json;

std::string dtype_name(torch::ScalarType t) {
  switch (t) {
    case torch::kFloat: return "float32";
    case torch::kDouble: return "float64";
    case torch::kLong: return "int64";
    default: throw std::invalid_argument("checkpoint: unsupported dtype");
  }
}

torch::ScalarType dtype_from_name(const std::string& name) {
  if (name == "float32") return torch::kFloat;
  if (name == "float64") return torch::kDouble;
  if (name == "int64") return torch::kLong;
  throw std::runtime_error("checkpoint: unknown dtype " + name);
}

std::string hex(const unsigned char* data, unsigned len) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (unsigned i = 0; i < len; ++i) {
    out.push_back(kDigits[data[i] >> 4]);
    out.push_back(kDigits[data[i] & 0xf]);
  }
  return out;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  json header;
  header["config"] = serialize_config(checkpoint.config);
  header["epoch"] = checkpoint.epoch;
  header["metadata"] = checkpoint.metadata;
  header["arrays"] = json::array();

  std::vector<torch::Tensor> blobs;
  uint64_t offset = 0;
  for (const auto& [name, tensor] : checkpoint.arrays) {
    auto t = tensor.detach().to(torch::kCPU).contiguous();
    const uint64_t bytes = t.numel() * t.element_size();
    header["arrays"].push_back({{"name", name},
                                {"dtype", dtype_name(t.scalar_type())},
                                {"shape", t.sizes().vec()},
                                {"offset", offset},
                                {"bytes", bytes}});
    offset += bytes;
    blobs.push_back(std::move(t));
  }
  const std::string header_text = header.dump();

  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write checkpoint " + tmp.string());
    out << kCheckpointFormat << '\n';
    const uint64_t len = header_text.size();
    std::array<char, 8> len_bytes{};
    for (int i = 0; i < 8; ++i) len_bytes[i] = static_cast<char>((len >> (8 * i)) & 0xff);
    out.write(len_bytes.data(), len_bytes.size());
    out.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
    for (const auto& t : blobs) {
      out.write(static_cast<const char*>(t.data_ptr()),
                static_cast<std::streamsize>(t.numel() * t.element_size()));
    }
    if (!out) throw std::runtime_error("short write on checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  std::string magic;
  std::getline(in, magic);
  if (magic != kCheckpointFormat) {
    throw std::runtime_error("checkpoint " + path.string() + " has format '" + magic +
                             "', expected '" + std::string(kCheckpointFormat) + "'");
  }
  std::array<unsigned char, 8> len_bytes{};
  in.read(reinterpret_cast<char*>(len_bytes.data()), len_bytes.size());
  uint64_t len = 0;
  for (int i = 0; i < 8; ++i) len |= static_cast<uint64_t>(len_bytes[i]) << (8 * i);
  std::string header_text(len, '\0');
  in.read(header_text.data(), static_cast<std::streamsize>(len));
  if (!in) throw std::runtime_error("truncated checkpoint header in " + path.string());

  const json header = json::parse(header_text);
  Checkpoint ck;
  ck.config = parse_config(header.at("config").get<std::string>());
  ck.epoch = header.at("epoch").get<int64_t>();
  ck.metadata = header.at("metadata").get<std::map<std::string, std::string>>();

  const auto data_start = in.tellg();
  for (const auto& entry : header.at("arrays")) {
    const auto shape = entry.at("shape").get<std::vector<int64_t>>();
    auto t = torch::empty(shape, torch::TensorOptions().dtype(
                                     dtype_from_name(entry.at("dtype").get<std::string>())));
    const auto bytes = entry.at("bytes").get<uint64_t>();
    if (bytes != static_cast<uint64_t>(t.numel() * t.element_size())) {
      throw std::runtime_error("checkpoint: inconsistent size for " +
                               entry.at("name").get<std::string>());
    }
    in.seekg(data_start + static_cast<std::streamoff>(entry.at("offset").get<uint64_t>()));
    in.read(static_cast<char*>(t.data_ptr()), static_cast<std::streamsize>(bytes));
    if (!in) throw std::runtime_error("truncated checkpoint data in " + path.string());
    ck.arrays.emplace(entry.at("name").get<std::string>(), std::move(t));
  }
  return ck;
}

void store_module(Checkpoint& checkpoint, const std::string& prefix,
                  const torch::nn::Module& module) {
  for (const auto& p : module.named_parameters()) {
    checkpoint.arrays[prefix + "/" + p.key()] = p.value().detach().clone();
  }
  for (const auto& b : module.named_buffers()) {
    checkpoint.arrays[prefix + "/" + b.key()] = b.value().detach().clone();
  }
}

void restore_module(const Checkpoint& checkpoint, const std::string& prefix,
                    torch::nn::Module& module) {
  torch::NoGradGuard no_grad;
  auto copy_into = [&](const std::string& name, torch::Tensor& dst) {
    const auto it = checkpoint.arrays.find(prefix + "/" + name);
    if (it == checkpoint.arrays.end()) {
      throw std::runtime_error("checkpoint/plan mismatch: missing " + prefix + "/" + name);
    }
    if (it->second.sizes() != dst.sizes()) {
      throw std::runtime_error("checkpoint/plan mismatch: shape of " + prefix + "/" + name);
    }
    dst.copy_(it->second);
  };
  for (auto& p : module.named_parameters()) copy_into(p.key(), p.value());
  for (auto& b : module.named_buffers()) copy_into(b.key(), b.value());
}

std::string sha256_bytes(std::string_view bytes) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned len = 0;
  EVP_Digest(bytes.data(), bytes.size(), digest.data(), &len, EVP_sha256(), nullptr);
  return hex(digest.data(), len);
}

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return sha256_bytes(buf.str());
}

}  // namespace pairgen
