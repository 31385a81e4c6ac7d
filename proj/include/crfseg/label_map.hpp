#pragma once

#include <cstdint>
#include <vector>

#include "crfseg/common.hpp"

namespace crfseg {

/// Dense h x w map of class indices.
struct LabelMap {
  int h = 0;
  int w = 0;
  std::vector<std::uint8_t> at;

  LabelMap() = default;
  LabelMap(int h_, int w_, std::uint8_t fill = 0)
      : h(h_), w(w_), at(static_cast<std::size_t>(h_) * w_, fill) {}

  std::uint8_t operator()(int r, int c) const {
    return at[static_cast<std::size_t>(r) * w + c];
  }
  std::uint8_t& operator()(int r, int c) {
    return at[static_cast<std::size_t>(r) * w + c];
  }
  std::size_t size() const { return at.size(); }

  void require_classes_below(int num_classes) const {
    for (std::uint8_t v : at)
      if (v >= num_classes)
        throw ValueError("label " + std::to_string(int(v)) + " out of range (P=" +
                         std::to_string(num_classes) + ")");
  }
};

}  // namespace crfseg
