#pragma once

#include <memory>

#include "rdcr/dataset.hpp"
#include "rdcr/rng.hpp"

namespace rdcr::shapeset {

struct ShapeSetSpec {
  int K = 6;
  int G = 16;   // square image side
  int N = 3000;
};

// Procedural orientation-sensitive glyphs with +-2px translation jitter and
// 0.8-1.2 intensity scaling; pure in (spec, seed); class-balanced.
std::shared_ptr<Dataset> generate(const ShapeSetSpec& spec, uint64_t seed);

}  // namespace rdcr::shapeset
