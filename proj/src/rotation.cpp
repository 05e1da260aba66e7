#include "rdcr/rotation.hpp"

#include <cstring>

namespace rdcr::rotation {

void rotate90_buffer(const double* src, double* dst, int c, int h, int w, int k) {
  k = ((k % 4) + 4) % 4;
  const Eigen::Index plane = static_cast<Eigen::Index>(h) * w;
  switch (k) {
    case 0:
      std::memcpy(dst, src, static_cast<size_t>(c) * plane * sizeof(double));
      return;
    case 1:  // (r,c) <- (c, W-1-r); output is W x H
      for (int ch = 0; ch < c; ++ch)
        for (int r = 0; r < w; ++r)
          for (int col = 0; col < h; ++col)
            dst[ch * plane + static_cast<Eigen::Index>(r) * h + col] =
                src[ch * plane + static_cast<Eigen::Index>(col) * w + (w - 1 - r)];
      return;
    case 2:  // 180: (r,c) <- (H-1-r, W-1-c)
      for (int ch = 0; ch < c; ++ch)
        for (int r = 0; r < h; ++r)
          for (int col = 0; col < w; ++col)
            dst[ch * plane + static_cast<Eigen::Index>(r) * w + col] =
                src[ch * plane + static_cast<Eigen::Index>(h - 1 - r) * w + (w - 1 - col)];
      return;
    case 3:  // (r,c) <- (H-1-c, r); output is W x H
      for (int ch = 0; ch < c; ++ch)
        for (int r = 0; r < w; ++r)
          for (int col = 0; col < h; ++col)
            dst[ch * plane + static_cast<Eigen::Index>(r) * h + col] =
                src[ch * plane + static_cast<Eigen::Index>(h - 1 - col) * w + r];
      return;
  }
}

Tensor rotate90(const Tensor& image, int k) {
  if (image.rank() != 3) throw ShapeError("rotate90: image must be [C,H,W]");
  const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
  const bool swaps = (((k % 4) + 4) % 4) % 2 == 1;
  Tensor out = Tensor::zeros(swaps ? std::vector<int>{c, w, h}
                                   : std::vector<int>{c, h, w});
  rotate90_buffer(image.ptr(), out.ptr(), c, h, w, k);
  return out;
}

std::pair<Tensor, std::vector<int>> expand_rotations(const Tensor& batch) {
  if (batch.rank() != 4) throw ShapeError("expand_rotations: batch must be [N,C,H,W]");
  if (batch.dim(0) < 1) throw ShapeError("expand_rotations: empty batch");
  if (batch.dim(2) != batch.dim(3))
    throw ShapeError("expand_rotations: images must be square");
  const int n = batch.dim(0), c = batch.dim(1), h = batch.dim(2);
  const Eigen::Index row = static_cast<Eigen::Index>(c) * h * h;
  Tensor out = Tensor::zeros({4 * n, c, h, h});
  std::vector<int> labels(static_cast<size_t>(4 * n));
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < 4; ++k) {
      rotate90_buffer(batch.ptr() + i * row, out.ptr() + (4 * i + k) * row, c, h, h, k);
      labels[static_cast<size_t>(4 * i + k)] = k;
    }
  return {out, labels};
}

}  // namespace rdcr::rotation
