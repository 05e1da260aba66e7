#include "rdcr/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <map>

#include "rdcr/error.hpp"

namespace rdcr {
namespace {

constexpr char kMagic[4] = {'R', 'D', 'C', 'R'};
constexpr uint32_t kVersion = 1;

uint8_t norm_code(const nn::Normalization& n) {
  switch (n.kind) {
    case nn::NormKind::batch: return 0;
    case nn::NormKind::instance: return 1;
    case nn::NormKind::layer: return 2;
    case nn::NormKind::group: return n.weight_standardization ? 4 : 3;
  }
  throw ConfigError("bad normalization kind");
}

nn::Normalization decode_norm(uint8_t code) {
  nn::Normalization n;
  switch (code) {
    case 0: n.kind = nn::NormKind::batch; break;
    case 1: n.kind = nn::NormKind::instance; break;
    case 2: n.kind = nn::NormKind::layer; break;
    case 3: n.kind = nn::NormKind::group; break;
    case 4: n.kind = nn::NormKind::group; n.weight_standardization = true; break;
    default: throw IoError("unknown normalization code " + std::to_string(code));
  }
  return n;
}

struct Writer {
  std::FILE* f;
  explicit Writer(const std::string& path) : f(std::fopen(path.c_str(), "wb")) {
    if (!f) throw IoError("cannot open " + path + " for writing");
  }
  ~Writer() {
    if (f) std::fclose(f);
  }
  void bytes(const void* p, size_t n) {
    if (std::fwrite(p, 1, n, f) != n) throw IoError("write failed");
  }
  void u32(uint32_t v) { bytes(&v, 4); }
  void f64(double v) { bytes(&v, 8); }
  void block(const std::string& name, const double* data, size_t count) {
    u32(static_cast<uint32_t>(name.size()));
    bytes(name.data(), name.size());
    uint64_t n = count;
    bytes(&n, 8);
    bytes(data, count * 8);
  }
  void close(const std::string& path) {
    if (std::fclose(f) != 0) {
      f = nullptr;
      throw IoError("failed writing " + path);
    }
    f = nullptr;
  }
};

struct Reader {
  std::FILE* f;
  std::string path;
  explicit Reader(const std::string& p) : f(std::fopen(p.c_str(), "rb")), path(p) {
    if (!f) throw IoError("cannot open " + p);
  }
  ~Reader() {
    if (f) std::fclose(f);
  }
  void bytes(void* p, size_t n) {
    if (std::fread(p, 1, n, f) != n) throw IoError(path + ": truncated checkpoint");
  }
  uint32_t u32() {
    uint32_t v;
    bytes(&v, 4);
    return v;
  }
  double f64() {
    double v;
    bytes(&v, 8);
    return v;
  }
  bool at_end() {
    int c = std::fgetc(f);
    if (c == EOF) return true;
    std::ungetc(c, f);
    return false;
  }
};

}  // namespace

void save_checkpoint(const std::string& path, const nn::NetworkParams& params) {
  Writer w(path);
  w.bytes(kMagic, 4);
  w.u32(kVersion);
  w.u32(static_cast<uint32_t>(params.config.num_classes));
  w.f64(params.config.width_multiplier);
  uint8_t code = norm_code(params.config.norm);
  w.bytes(&code, 1);

  const double meta[5] = {
      static_cast<double>(params.config.in_channels),
      static_cast<double>(params.config.image_size),
      static_cast<double>(params.config.norm.group_size),
      params.config.dropout_p,
      params.config.norm.epsilon,
  };
  w.block("meta", meta, 5);

  auto& mutable_params = const_cast<nn::NetworkParams&>(params);
  for (auto& [name, tensor] : mutable_params.named_parameters())
    w.block(name, tensor.data().data(), tensor.data().size());
  for (size_t i = 0; i < params.backbone.size(); ++i) {
    const auto& layer = params.backbone[i];
    w.block("backbone." + std::to_string(i) + ".running_mean",
            layer.running_mean.data(), layer.running_mean.size());
    w.block("backbone." + std::to_string(i) + ".running_var",
            layer.running_var.data(), layer.running_var.size());
  }
  w.close(path);
}

nn::NetworkParams load_checkpoint(const std::string& path) {
  Reader r(path);
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw IoError(path + ": not a checkpoint (bad magic)");
  uint32_t version = r.u32();
  if (version != kVersion)
    throw IoError(path + ": unsupported checkpoint version " + std::to_string(version));
  uint32_t num_classes = r.u32();
  double width = r.f64();
  uint8_t code;
  r.bytes(&code, 1);

  std::map<std::string, std::vector<double>> blocks;
  while (!r.at_end()) {
    uint32_t name_len = r.u32();
    if (name_len > 4096) throw IoError(path + ": implausible block name length");
    std::string name(name_len, '\0');
    r.bytes(name.data(), name_len);
    uint64_t count;
    r.bytes(&count, 8);
    if (count > (1ull << 32)) throw IoError(path + ": implausible block size");
    std::vector<double> data(count);
    r.bytes(data.data(), count * 8);
    if (!blocks.emplace(std::move(name), std::move(data)).second)
      throw IoError(path + ": duplicate block");
  }

  auto meta_it = blocks.find("meta");
  if (meta_it == blocks.end() || meta_it->second.size() != 5)
    throw IoError(path + ": missing meta block");
  const auto& meta = meta_it->second;

  nn::ModelConfig config;
  config.num_classes = static_cast<int>(num_classes);
  config.width_multiplier = width;
  config.norm = decode_norm(code);
  config.in_channels = static_cast<int>(meta[0]);
  config.image_size = static_cast<int>(meta[1]);
  config.norm.group_size = static_cast<int>(meta[2]);
  config.dropout_p = meta[3];
  config.norm.epsilon = meta[4];
  blocks.erase(meta_it);

  nn::NetworkParams params = nn::build_backbone(config, 0);
  auto take = [&](const std::string& name, double* dst, size_t count) {
    auto it = blocks.find(name);
    if (it == blocks.end()) throw IoError(path + ": missing block " + name);
    if (it->second.size() != count)
      throw IoError(path + ": block " + name + " has " +
                    std::to_string(it->second.size()) + " values, expected " +
                    std::to_string(count));
    std::memcpy(dst, it->second.data(), count * 8);
    blocks.erase(it);
  };
  for (auto& [name, tensor] : params.named_parameters())
    take(name, tensor.data().data(), tensor.data().size());
  for (size_t i = 0; i < params.backbone.size(); ++i) {
    auto& layer = params.backbone[i];
    take("backbone." + std::to_string(i) + ".running_mean",
         layer.running_mean.data(), layer.running_mean.size());
    take("backbone." + std::to_string(i) + ".running_var",
         layer.running_var.data(), layer.running_var.size());
  }
  if (!blocks.empty())
    throw IoError(path + ": unknown block " + blocks.begin()->first);
  return params;
}

}  // namespace rdcr
