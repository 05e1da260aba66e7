#pragma once

#include <string>

#include "rdcr/nn.hpp"

namespace rdcr {

// Binary network snapshot.  Little-endian throughout; header carries the
// "RDCR" magic, a format version, the class count, the width multiplier and
// the normalization kind, followed by length-prefixed named f64 blocks (one
// per parameter, plus running statistics and a "meta" block for the rest of
// the model configuration).  Round-trips bit-exactly.
void save_checkpoint(const std::string& path, const nn::NetworkParams& params);
nn::NetworkParams load_checkpoint(const std::string& path);

}  // namespace rdcr
