#pragma once

#include <cstddef>
#include <functional>
#include <stdexcept>
#include <string>

namespace crfseg {

/// Shape or dimensionality violation (mismatched operands, bad ranks).
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Invalid argument value (out-of-range label, degenerate input, bad mode).
class ValueError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// File or format problem (missing file, malformed content).
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite value where a finite one is required (diverged training step).
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Static-partition parallel loop over [0, n). Each index is processed by
/// exactly one thread with a fixed partition, so any kernel whose per-index
/// work touches disjoint outputs produces results bit-identical to the
/// sequential loop.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

int max_threads();

}  // namespace crfseg
