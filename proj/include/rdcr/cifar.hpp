#pragma once

#include <array>
#include <memory>
#include <string>
#include <vector>

#include "rdcr/dataset.hpp"

namespace rdcr::cifar {

enum class Variant { cifar10, cifar100 };

// One binary file, bit-exact: cifar10 records are 3073 bytes (label, then
// 1024 R + 1024 G + 1024 B), cifar100 records are 3074 (coarse, fine, pixels).
struct RawFile {
  std::vector<int> labels;          // cifar100: fine label
  std::vector<uint8_t> coarse;      // cifar100 only
  std::vector<uint8_t> pixels;      // 3072 bytes per record
};

RawFile read_file(const std::string& path, Variant v);
void write_file(const std::string& path, const RawFile& raw, Variant v);

struct Loaded {
  std::shared_ptr<Dataset> train;
  std::shared_ptr<Dataset> test;
  std::array<double, 3> mean{};    // computed on the training split
  std::array<double, 3> stddev{};  // of pixels scaled to [0,1]
  std::vector<uint8_t> train_coarse, test_coarse;
};

// Explicit file lists (fixtures use short files).
Loaded load_files(const std::vector<std::string>& train_paths,
                  const std::string& test_path, Variant v);

// Standard directory layouts: data_batch_1..5.bin + test_batch.bin, or
// train.bin + test.bin.
Loaded load(const std::string& dir, Variant v);

// Inverse of the scaling + standardization; recovers the original bytes.
std::vector<uint8_t> reencode_pixels(const Dataset& d, int n,
                                     const std::array<double, 3>& mean,
                                     const std::array<double, 3>& stddev);

}  // namespace rdcr::cifar
