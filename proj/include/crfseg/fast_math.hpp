#pragma once

#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>

namespace crfseg {

// Branchless polynomial expf (Cephes-style range reduction). Relative error
// is ~2 ulp across the clamped domain, exp(0) == 1 exactly. Written so the
// compiler can vectorize elementwise loops over it; std::exp is not used in
// bulk tensor paths because scalar libm calls defeat vectorization.
inline float fast_exp(float x) {
  constexpr float kLog2e = 1.44269504088896341f;
  constexpr float kLn2Hi = 0.693359375f;
  constexpr float kLn2Lo = -2.12194440e-4f;
  x = x < -87.0f ? -87.0f : x;
  x = x > 88.0f ? 88.0f : x;
  float n = std::floor(x * kLog2e + 0.5f);
  float r = x - n * kLn2Hi;
  r -= n * kLn2Lo;
  float z = r * r;
  float p = 1.9875691500e-4f;
  p = p * r + 1.3981999507e-3f;
  p = p * r + 8.3334519073e-3f;
  p = p * r + 4.1665795894e-2f;
  p = p * r + 1.6666665459e-1f;
  p = p * r + 5.0000001201e-1f;
  p = p * z + r + 1.0f;
  std::uint32_t bits = (static_cast<std::uint32_t>(static_cast<std::int32_t>(n) + 127)) << 23;
  return p * std::bit_cast<float>(bits);
}

inline float fast_sigmoid(float x) { return 1.0f / (1.0f + fast_exp(-x)); }

inline float fast_tanh(float x) { return 1.0f - 2.0f / (fast_exp(2.0f * x) + 1.0f); }

inline void fast_exp_array(const float* in, float* out, std::size_t n) {
#pragma omp simd
  for (std::size_t i = 0; i < n; ++i) out[i] = fast_exp(in[i]);
}

inline void fast_sigmoid_array(const float* in, float* out, std::size_t n) {
#pragma omp simd
  for (std::size_t i = 0; i < n; ++i) out[i] = fast_sigmoid(in[i]);
}

inline void fast_tanh_array(const float* in, float* out, std::size_t n) {
#pragma omp simd
  for (std::size_t i = 0; i < n; ++i) out[i] = fast_tanh(in[i]);
}

}  // namespace crfseg
