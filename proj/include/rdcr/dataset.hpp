#pragma once

#include <Eigen/Core>
#include <vector>

#include "rdcr/error.hpp"

namespace rdcr {

// Labeled image collection; images are square, stored as contiguous
// channels*size*size rows of doubles.
struct Dataset {
  int K = 0;
  int channels = 1;
  int size = 16;
  std::vector<int> labels;
  Eigen::ArrayXd images;

  int count() const { return static_cast<int>(labels.size()); }
  Eigen::Index row_len() const {
    return static_cast<Eigen::Index>(channels) * size * size;
  }
  const double* image(int n) const { return images.data() + n * row_len(); }
  double* image(int n) { return images.data() + n * row_len(); }

  void validate() const {
    if (K < 2) throw ShapeError("dataset: need at least 2 classes");
    if (images.size() != count() * row_len())
      throw ShapeError("dataset: image buffer does not match label count");
    for (int y : labels)
      if (y < 0 || y >= K) throw ShapeError("dataset: label out of range");
  }
};

}  // namespace rdcr
