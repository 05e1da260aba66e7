#include "rdcr/cifar.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "rdcr/error.hpp"

namespace rdcr::cifar {
namespace {

constexpr int kPixelsPerRecord = 3 * 32 * 32;

int record_bytes(Variant v) {
  return v == Variant::cifar10 ? 1 + kPixelsPerRecord : 2 + kPixelsPerRecord;
}

int label_count(Variant v) { return v == Variant::cifar10 ? 10 : 100; }

std::vector<uint8_t> read_all(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw IoError("cannot open " + path);
  std::fseek(f, 0, SEEK_END);
  long size = std::ftell(f);
  std::fseek(f, 0, SEEK_SET);
  std::vector<uint8_t> bytes(static_cast<size_t>(size));
  size_t got = size > 0 ? std::fread(bytes.data(), 1, bytes.size(), f) : 0;
  std::fclose(f);
  if (got != bytes.size()) throw IoError("short read from " + path);
  return bytes;
}

}  // namespace

RawFile read_file(const std::string& path, Variant v) {
  std::vector<uint8_t> bytes = read_all(path);
  const int rec = record_bytes(v);
  if (bytes.empty() || bytes.size() % rec != 0)
    throw IoError(path + ": size " + std::to_string(bytes.size()) +
                  " is not a multiple of the " + std::to_string(rec) +
                  "-byte record");
  const int n = static_cast<int>(bytes.size()) / rec;
  RawFile raw;
  raw.labels.resize(n);
  raw.pixels.resize(static_cast<size_t>(n) * kPixelsPerRecord);
  if (v == Variant::cifar100) raw.coarse.resize(n);
  for (int i = 0; i < n; ++i) {
    const uint8_t* p = bytes.data() + static_cast<size_t>(i) * rec;
    int fine;
    if (v == Variant::cifar10) {
      fine = p[0];
      ++p;
    } else {
      raw.coarse[i] = p[0];
      fine = p[1];
      p += 2;
    }
    if (fine >= label_count(v))
      throw IoError(path + ": label " + std::to_string(fine) +
                    " out of range in record " + std::to_string(i));
    raw.labels[i] = fine;
    std::copy(p, p + kPixelsPerRecord,
              raw.pixels.begin() + static_cast<size_t>(i) * kPixelsPerRecord);
  }
  return raw;
}

void write_file(const std::string& path, const RawFile& raw, Variant v) {
  const int n = static_cast<int>(raw.labels.size());
  if (raw.pixels.size() != static_cast<size_t>(n) * kPixelsPerRecord)
    throw IoError("pixel buffer does not match label count");
  if (v == Variant::cifar100 && raw.coarse.size() != static_cast<size_t>(n))
    throw IoError("coarse labels missing");
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw IoError("cannot open " + path + " for writing");
  bool ok = true;
  for (int i = 0; i < n && ok; ++i) {
    uint8_t head[2];
    int head_len = 0;
    if (v == Variant::cifar100) head[head_len++] = raw.coarse[i];
    head[head_len++] = static_cast<uint8_t>(raw.labels[i]);
    ok = std::fwrite(head, 1, head_len, f) == static_cast<size_t>(head_len) &&
         std::fwrite(raw.pixels.data() + static_cast<size_t>(i) * kPixelsPerRecord,
                     1, kPixelsPerRecord, f) == kPixelsPerRecord;
  }
  if (std::fclose(f) != 0) ok = false;
  if (!ok) throw IoError("failed writing " + path);
}

namespace {

std::shared_ptr<Dataset> assemble(const RawFile& raw, Variant v,
                                  const std::array<double, 3>& mean,
                                  const std::array<double, 3>& stddev) {
  auto d = std::make_shared<Dataset>();
  d->K = label_count(v);
  d->channels = 3;
  d->size = 32;
  d->labels = raw.labels;
  const int n = static_cast<int>(raw.labels.size());
  d->images.resize(static_cast<Eigen::Index>(n) * kPixelsPerRecord);
  for (int i = 0; i < n; ++i) {
    const uint8_t* src = raw.pixels.data() + static_cast<size_t>(i) * kPixelsPerRecord;
    double* dst = d->images.data() + static_cast<Eigen::Index>(i) * kPixelsPerRecord;
    for (int c = 0; c < 3; ++c)
      for (int p = 0; p < 1024; ++p)
        dst[c * 1024 + p] =
            (src[c * 1024 + p] / 255.0 - mean[c]) / stddev[c];
  }
  return d;
}

}  // namespace

Loaded load_files(const std::vector<std::string>& train_paths,
                  const std::string& test_path, Variant v) {
  if (train_paths.empty()) throw IoError("no training files given");
  RawFile train;
  for (const auto& path : train_paths) {
    RawFile part = read_file(path, v);
    train.labels.insert(train.labels.end(), part.labels.begin(), part.labels.end());
    train.coarse.insert(train.coarse.end(), part.coarse.begin(), part.coarse.end());
    train.pixels.insert(train.pixels.end(), part.pixels.begin(), part.pixels.end());
  }
  RawFile test = read_file(test_path, v);

  Loaded out;
  // Standardization constants come from the training split alone.
  const size_t plane = 1024;
  const size_t n = train.labels.size();
  for (int c = 0; c < 3; ++c) {
    double sum = 0.0, sq = 0.0;
    for (size_t i = 0; i < n; ++i) {
      const uint8_t* px = train.pixels.data() + i * kPixelsPerRecord + c * plane;
      for (size_t p = 0; p < plane; ++p) {
        double x = px[p] / 255.0;
        sum += x;
        sq += x * x;
      }
    }
    double count = static_cast<double>(n * plane);
    double mu = sum / count;
    double var = sq / count - mu * mu;
    out.mean[c] = mu;
    out.stddev[c] = std::max(std::sqrt(std::max(var, 0.0)), 1e-12);
  }
  out.train = assemble(train, v, out.mean, out.stddev);
  out.test = assemble(test, v, out.mean, out.stddev);
  out.train_coarse = std::move(train.coarse);
  out.test_coarse = std::move(test.coarse);
  return out;
}

Loaded load(const std::string& dir, Variant v) {
  namespace fs = std::filesystem;
  std::vector<std::string> train_paths;
  std::string test_path;
  if (v == Variant::cifar10) {
    for (int b = 1; b <= 5; ++b)
      train_paths.push_back((fs::path(dir) / ("data_batch_" + std::to_string(b) + ".bin")).string());
    test_path = (fs::path(dir) / "test_batch.bin").string();
  } else {
    train_paths.push_back((fs::path(dir) / "train.bin").string());
    test_path = (fs::path(dir) / "test.bin").string();
  }
  return load_files(train_paths, test_path, v);
}

std::vector<uint8_t> reencode_pixels(const Dataset& d, int n,
                                     const std::array<double, 3>& mean,
                                     const std::array<double, 3>& stddev) {
  if (d.channels != 3 || d.size != 32) throw ShapeError("not a cifar dataset");
  std::vector<uint8_t> bytes(kPixelsPerRecord);
  auto img = d.image(n);
  for (int c = 0; c < 3; ++c)
    for (int p = 0; p < 1024; ++p) {
      double x = (img[c * 1024 + p] * stddev[c] + mean[c]) * 255.0;
      long q = std::lround(x);
      if (q < 0 || q > 255)
        throw IoError("pixel out of byte range after inverse standardization");
      bytes[c * 1024 + p] = static_cast<uint8_t>(q);
    }
  return bytes;
}

}  // namespace rdcr::cifar
