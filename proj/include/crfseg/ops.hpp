#pragma once

#include <array>
#include <optional>
#include <span>
#include <vector>

#include "crfseg/tensor.hpp"

namespace crfseg {

struct Conv2dSpec {
  std::array<int, 2> stride{1, 1};
  std::array<int, 2> pad{0, 0};
  std::array<int, 2> dilation{1, 1};
};

enum class ConvBackend {
  Fast,    // tile-staged microkernel; bit-identical to Direct by construction
  Direct,  // straightforward nested loops
};

/// Process-wide convolution backend selector (tests flip it to cross-check).
void set_conv_backend(ConvBackend backend);
ConvBackend conv_backend();

/// 2-D convolution over [N,Cin,H,W] with kernels [Cout,Cin,kh,kw] and
/// optional bias [Cout]. Out-of-bounds reads are zero (zero padding).
/// Both backends accumulate each output in f32 over (cin,kh,kw) in that
/// order with fused multiply-adds, so their results are bit-identical.
Tensor conv2d(const Tensor& input, const Tensor& kernels,
              const std::optional<Tensor>& bias = std::nullopt,
              const Conv2dSpec& spec = {});

std::array<int, 2> conv2d_output_hw(int h, int w, int kh, int kw,
                                    const Conv2dSpec& spec);

/// Two same-shaped kernel sets applied to one input (e.g. the gated filter
/// and gate paths); the staged input is shared between them.
std::pair<Tensor, Tensor> conv2d_pair(const Tensor& input, const Tensor& kernels_a,
                                      const Tensor& bias_a, const Tensor& kernels_b,
                                      const Tensor& bias_b, const Conv2dSpec& spec);

/// Channel order used for pairwise kernels and shifts: up, right, down, left.
enum class ShiftDir { Up = 0, Right = 1, Down = 2, Left = 3 };

ShiftDir opposite(ShiftDir dir);

/// Moves content of [N,C,H,W] one pixel in `dir`; the vacated border row or
/// column is zero-filled.
Tensor spatial_shift(const Tensor& input, ShiftDir dir);

/// Per-pixel softmax over the channel axis of [N,P,H,W], computed with
/// max-subtraction and an f64 normalizer.
Tensor softmax_channels(const Tensor& input);

enum class Act { Relu, LeakyRelu, Sigmoid, Tanh, Exp };

Tensor activation(const Tensor& input, Act kind, float leaky_slope = 0.01f);
Tensor relu(const Tensor& x);
Tensor leaky_relu(const Tensor& x, float slope);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor exp(const Tensor& x);

/// tanh(filter_pre) * sigmoid(gate_pre), elementwise; shapes must match.
Tensor gated_activation(const Tensor& filter_pre, const Tensor& gate_pre);

/// Running statistics of a batch-norm layer. Updated in train mode with
/// momentum 0.9 (new = 0.9*old + 0.1*batch); infer mode reads them.
struct RunningStats {
  std::vector<float> mean;
  std::vector<float> var;
  float momentum = 0.9f;

  explicit RunningStats(int channels = 0)
      : mean(channels, 0.0f), var(channels, 1.0f) {}
};

/// Batch normalization over (N,H,W) per channel with eps=1e-5.
/// Train mode standardizes with batch statistics (differentiated through
/// them) and updates `stats` as a side effect; infer mode uses `stats`.
Tensor batch_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                  RunningStats& stats, bool training, float eps = 1e-5f);

/// [N,C,H,W] -> [N,C], arithmetic mean over the spatial axes.
Tensor global_avg_pool(const Tensor& input);

/// [N,F] x [O,F]^T + b -> [N,O].
Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor scale(const Tensor& a, float c);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

/// [N,C,H,W] * [N,1,H,W], the single channel broadcast across C.
Tensor mul_channel_broadcast(const Tensor& x, const Tensor& per_pixel);

/// Channels [from, from+count) of [N,C,H,W].
Tensor channel_slice(const Tensor& x, int from, int count);

Tensor concat_channels(std::span<const Tensor> parts);

/// Sum of all elements (f64 accumulator) as a scalar tensor of shape [1].
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

/// ln(max(x, floor)); gradient is dy/x above the floor and 0 below it.
Tensor log_clamped(const Tensor& x, float floor = 1e-12f);

/// 1 - x.
Tensor one_minus(const Tensor& x);

/// Same data, new extents (element count must match). Gradient passes through.
Tensor reshape(const Tensor& x, Shape shape);

}  // namespace crfseg
