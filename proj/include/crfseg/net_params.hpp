#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <string>

#include "crfseg/tensor.hpp"

namespace crfseg {

struct ConvParams {
  Tensor w;
  Tensor b;
};

/// Callback over named parameter tensors, used by the optimizer and the
/// checkpoint writer. Visit order is fixed and documented per network.
using ParamVisitor = std::function<void(const std::string&, Tensor&)>;

/// Zero-mean Gaussian with std sqrt(2 / fan_in).
inline Tensor he_normal(Shape shape, int fan_in, std::mt19937& rng) {
  return Tensor::randn(std::move(shape), rng,
                       std::sqrt(2.0f / static_cast<float>(fan_in)), true);
}

inline ConvParams init_conv(int cout, int cin, int kh, int kw, std::mt19937& rng) {
  return {he_normal({cout, cin, kh, kw}, cin * kh * kw, rng),
          Tensor::zeros({cout}, true)};
}

}  // namespace crfseg
