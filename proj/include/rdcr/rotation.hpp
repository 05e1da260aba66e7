#pragma once

#include <vector>

#include "rdcr/tensor.hpp"

namespace rdcr::rotation {

// k applications of a fixed 90-degree counter-clockwise rotation; output
// pixel (r,c) of one application reads source pixel (c, W-1-r).
void rotate90_buffer(const double* src, double* dst, int c, int h, int w, int k);

Tensor rotate90(const Tensor& image, int k);  // [C,H,W] -> [C,W,H] for odd k

// 4N oriented copies in source-major, label-minor order: copy 4n+k of the
// output is input n rotated k times, so un-rotated copies sit at stride 4.
std::pair<Tensor, std::vector<int>> expand_rotations(const Tensor& batch);

}  // namespace rdcr::rotation
