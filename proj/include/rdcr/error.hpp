#pragma once

#include <stdexcept>
#include <string>

namespace rdcr {

// Bad tensor shapes, out-of-range labels, invalid op arguments.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Malformed or inconsistent configuration. CLI exit code 2.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// NaN/Inf surfaced in values or gradients. CLI exit code 3.
struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// File I/O failures. CLI exit code 4.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace rdcr
