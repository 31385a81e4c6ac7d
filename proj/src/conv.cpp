#include <cmath>
#include <cstring>
#include <vector>

#ifdef __AVX512F__
#include <immintrin.h>
#endif

#include "crfseg/ops.hpp"

// Convolution backends.
//
// The accumulation order of every output element is fixed: start from the
// bias, then fused multiply-adds over (cin, kh, kw) ascending, in f32.
// The Direct backend is the plain nested loop spelling of that contract.
// The Fast backend stages im2col tiles of 64 consecutive outputs (flat
// output index, row crossings handled during staging) and runs a
// register-blocked microkernel, but performs the same fused operations in
// the same per-output order, so the two backends agree bit for bit (modulo
// the sign of zero, since staged zero-padding contributes exact zero terms).
//
// Backward kernels use fixed deterministic orders (documented inline) but
// are not required to replicate the forward accumulation order.

namespace crfseg {

namespace {

ConvBackend g_backend = ConvBackend::Fast;

struct ConvDims {
  int n, cin, h, w;
  int cout, kh, kw;
  int oh, ow;
  Conv2dSpec spec;
};

ConvDims check_conv(const Tensor& input, const Tensor& kernels,
                    const std::optional<Tensor>& bias, const Conv2dSpec& spec) {
  if (input.rank() != 4)
    throw ShapeError("conv2d: input must be [N,C,H,W], got " + shape_str(input.shape()));
  if (kernels.rank() != 4)
    throw ShapeError("conv2d: kernels must be [Cout,Cin,kh,kw], got " +
                     shape_str(kernels.shape()));
  ConvDims d;
  d.n = input.dim(0);
  d.cin = input.dim(1);
  d.h = input.dim(2);
  d.w = input.dim(3);
  d.cout = kernels.dim(0);
  d.kh = kernels.dim(2);
  d.kw = kernels.dim(3);
  d.spec = spec;
  if (kernels.dim(1) != d.cin)
    throw ShapeError("conv2d: kernel expects " + std::to_string(kernels.dim(1)) +
                     " input channels, input has " + std::to_string(d.cin));
  if (d.kh < 1 || d.kw < 1) throw ShapeError("conv2d: kernel extents must be >= 1");
  if (spec.stride[0] < 1 || spec.stride[1] < 1)
    throw ShapeError("conv2d: stride must be >= 1");
  if (spec.dilation[0] < 1 || spec.dilation[1] < 1)
    throw ShapeError("conv2d: dilation must be >= 1");
  if (spec.pad[0] < 0 || spec.pad[1] < 0) throw ShapeError("conv2d: negative pad");
  if (bias && (bias->rank() != 1 || bias->dim(0) != d.cout))
    throw ShapeError("conv2d: bias must be [Cout]");
  auto hw = conv2d_output_hw(d.h, d.w, d.kh, d.kw, spec);
  d.oh = hw[0];
  d.ow = hw[1];
  return d;
}

// ---------------------------------------------------------------- direct

void conv_forward_direct(const ConvDims& d, const float* in, const float* ker,
                         const float* bias, float* out) {
  const int K = d.cin * d.kh * d.kw;
  parallel_for(static_cast<std::size_t>(d.n) * d.cout, [&](std::size_t task) {
    const int n = static_cast<int>(task) / d.cout;
    const int co = static_cast<int>(task) % d.cout;
    const float* w0 = ker + static_cast<std::size_t>(co) * K;
    const float* in_n = in + static_cast<std::size_t>(n) * d.cin * d.h * d.w;
    float* out_p = out + (static_cast<std::size_t>(n) * d.cout + co) * d.oh * d.ow;
    const float b = bias ? bias[co] : 0.0f;
    for (int oy = 0; oy < d.oh; ++oy) {
      for (int ox = 0; ox < d.ow; ++ox) {
        float acc = b;
        const float* w = w0;
        for (int ci = 0; ci < d.cin; ++ci) {
          const float* plane = in_n + static_cast<std::size_t>(ci) * d.h * d.w;
          for (int ky = 0; ky < d.kh; ++ky) {
            const int iy = oy * d.spec.stride[0] - d.spec.pad[0] + ky * d.spec.dilation[0];
            for (int kx = 0; kx < d.kw; ++kx, ++w) {
              const int ix = ox * d.spec.stride[1] - d.spec.pad[1] + kx * d.spec.dilation[1];
              if (iy >= 0 && iy < d.h && ix >= 0 && ix < d.w)
                acc = std::fma(*w, plane[static_cast<std::size_t>(iy) * d.w + ix], acc);
            }
          }
        }
        out_p[static_cast<std::size_t>(oy) * d.ow + ox] = acc;
      }
    }
  });
}

// ----------------------------------------------------------------- fast

constexpr int kTile = 64;

// Stages X[k][0..kTile) for the flat output range [m0, m0+tile) of one
// sample, k ordered (cin, kh, kw). Out-of-bounds reads and lanes beyond
// `tile` become zero. Output rows inside the range are handled segment by
// segment so tiles may cross row boundaries.
void stage_tile(const ConvDims& d, const float* in_n, int m0, int tile, float* xs) {
  const int sy = d.spec.stride[0], sx = d.spec.stride[1];
  const int dy = d.spec.dilation[0], dx = d.spec.dilation[1];
  float* row = xs;
  for (int ci = 0; ci < d.cin; ++ci) {
    const float* plane = in_n + static_cast<std::size_t>(ci) * d.h * d.w;
    for (int ky = 0; ky < d.kh; ++ky) {
      for (int kx = 0; kx < d.kw; ++kx, row += kTile) {
        if (tile < kTile)
          std::memset(row + tile, 0, sizeof(float) * (kTile - tile));
        int j = 0;
        while (j < tile) {
          const int m = m0 + j;
          const int oy = m / d.ow;
          const int ox = m % d.ow;
          const int seg = std::min(tile - j, d.ow - ox);  // outputs left in this row
          const int iy = oy * sy - d.spec.pad[0] + ky * dy;
          if (iy < 0 || iy >= d.h) {
            std::memset(row + j, 0, sizeof(float) * seg);
            j += seg;
            continue;
          }
          const float* src = plane + static_cast<std::size_t>(iy) * d.w;
          const int base = ox * sx - d.spec.pad[1] + kx * dx;
          if (sx == 1) {
            int a = base < 0 ? -base : 0;       // leading zeros
            int b = std::min(seg, d.w - base);  // valid end
            if (b < a) b = a;
            if (a > 0) std::memset(row + j, 0, sizeof(float) * a);
            if (b > a) std::memcpy(row + j + a, src + base + a, sizeof(float) * (b - a));
            if (b < seg) std::memset(row + j + b, 0, sizeof(float) * (seg - b));
          } else {
            for (int q = 0; q < seg; ++q) {
              const int ix = base + q * sx;
              row[j + q] = (ix >= 0 && ix < d.w) ? src[ix] : 0.0f;
            }
          }
          j += seg;
        }
      }
    }
  }
}

#ifdef __AVX512F__

// ROWS output channels x 64 outputs; k loop inside; f32 fma.
template <int ROWS>
void micro_fwd(const float* xs, const float* w, int K, int ldw, const float* bias,
               float* const* outp, int tile) {
  __m512 acc[ROWS][4];
  for (int c = 0; c < ROWS; ++c) {
    __m512 b = _mm512_set1_ps(bias ? bias[c] : 0.0f);
    for (int j = 0; j < 4; ++j) acc[c][j] = b;
  }
  for (int k = 0; k < K; ++k) {
    const float* x = xs + static_cast<std::size_t>(k) * kTile;
    __m512 x0 = _mm512_loadu_ps(x), x1 = _mm512_loadu_ps(x + 16),
           x2 = _mm512_loadu_ps(x + 32), x3 = _mm512_loadu_ps(x + 48);
    for (int c = 0; c < ROWS; ++c) {
      __m512 wc = _mm512_set1_ps(w[static_cast<std::size_t>(c) * ldw + k]);
      acc[c][0] = _mm512_fmadd_ps(wc, x0, acc[c][0]);
      acc[c][1] = _mm512_fmadd_ps(wc, x1, acc[c][1]);
      acc[c][2] = _mm512_fmadd_ps(wc, x2, acc[c][2]);
      acc[c][3] = _mm512_fmadd_ps(wc, x3, acc[c][3]);
    }
  }
  alignas(64) float buf[kTile];
  for (int c = 0; c < ROWS; ++c) {
    if (tile == kTile) {
      _mm512_storeu_ps(outp[c], acc[c][0]);
      _mm512_storeu_ps(outp[c] + 16, acc[c][1]);
      _mm512_storeu_ps(outp[c] + 32, acc[c][2]);
      _mm512_storeu_ps(outp[c] + 48, acc[c][3]);
    } else {
      for (int j = 0; j < 4; ++j) _mm512_store_ps(buf + 16 * j, acc[c][j]);
      std::memcpy(outp[c], buf, sizeof(float) * tile);
    }
  }
}

#else

template <int ROWS>
void micro_fwd(const float* xs, const float* w, int K, int ldw, const float* bias,
               float* const* outp, int tile) {
  float acc[ROWS][kTile];
  for (int c = 0; c < ROWS; ++c)
    for (int j = 0; j < kTile; ++j) acc[c][j] = bias ? bias[c] : 0.0f;
  for (int k = 0; k < K; ++k) {
    const float* x = xs + static_cast<std::size_t>(k) * kTile;
    for (int c = 0; c < ROWS; ++c) {
      const float wc = w[static_cast<std::size_t>(c) * ldw + k];
      for (int j = 0; j < kTile; ++j) acc[c][j] = std::fma(wc, x[j], acc[c][j]);
    }
  }
  for (int c = 0; c < ROWS; ++c) std::memcpy(outp[c], acc[c], sizeof(float) * tile);
}

#endif

void micro_fwd_rows(int rows, const float* xs, const float* w, int K, int ldw,
                    const float* bias, float* const* outp, int tile) {
  switch (rows) {
    case 6: micro_fwd<6>(xs, w, K, ldw, bias, outp, tile); break;
    case 5: micro_fwd<5>(xs, w, K, ldw, bias, outp, tile); break;
    case 4: micro_fwd<4>(xs, w, K, ldw, bias, outp, tile); break;
    case 3: micro_fwd<3>(xs, w, K, ldw, bias, outp, tile); break;
    case 2: micro_fwd<2>(xs, w, K, ldw, bias, outp, tile); break;
    default: micro_fwd<1>(xs, w, K, ldw, bias, outp, tile); break;
  }
}

thread_local std::vector<float> tl_stage;

// One or two kernel sets applied to the same staged input (the gated filter
// and gate convolutions share their input, so they share the staging).
struct KernelSet {
  const float* ker;
  const float* bias;
  float* out;
};

void conv_forward_fast_multi(const ConvDims& d, const float* in,
                             const KernelSet* sets, int nsets) {
  const int K = d.cin * d.kh * d.kw;
  const std::size_t plane = static_cast<std::size_t>(d.oh) * d.ow;
  const int tiles = static_cast<int>((plane + kTile - 1) / kTile);
  parallel_for(static_cast<std::size_t>(d.n) * tiles, [&](std::size_t task) {
    const int n = static_cast<int>(task) / tiles;
    const int m0 = static_cast<int>(task % tiles) * kTile;
    const int tile = std::min<int>(kTile, static_cast<int>(plane) - m0);
    tl_stage.resize(static_cast<std::size_t>(K) * kTile);
    stage_tile(d, in + static_cast<std::size_t>(n) * d.cin * d.h * d.w, m0, tile,
               tl_stage.data());
    for (int s = 0; s < nsets; ++s) {
      float* out_n = sets[s].out + static_cast<std::size_t>(n) * d.cout * plane + m0;
      for (int co = 0; co < d.cout; co += 6) {
        const int rows = std::min(6, d.cout - co);
        float* outp[6];
        for (int c = 0; c < rows; ++c) outp[c] = out_n + static_cast<std::size_t>(co + c) * plane;
        micro_fwd_rows(rows, tl_stage.data(), sets[s].ker + static_cast<std::size_t>(co) * K,
                       K, K, sets[s].bias ? sets[s].bias + co : nullptr, outp, tile);
      }
    }
  });
}

void conv_forward_fast(const ConvDims& d, const float* in, const float* ker,
                       const float* bias, float* out) {
  KernelSet set{ker, bias, out};
  conv_forward_fast_multi(d, in, &set, 1);
}

// --------------------------------------------------------------- backward

// Tile dot product: sum_j a[j] * b[j] over one staged tile, lane-tree
// reduced. The tree shape is fixed, so results are run-to-run deterministic.
#ifdef __AVX512F__
inline float tile_dot(const float* a, const float* b) {
  __m512 s0 = _mm512_mul_ps(_mm512_loadu_ps(a), _mm512_loadu_ps(b));
  __m512 s1 = _mm512_mul_ps(_mm512_loadu_ps(a + 16), _mm512_loadu_ps(b + 16));
  __m512 s2 = _mm512_mul_ps(_mm512_loadu_ps(a + 32), _mm512_loadu_ps(b + 32));
  __m512 s3 = _mm512_mul_ps(_mm512_loadu_ps(a + 48), _mm512_loadu_ps(b + 48));
  return _mm512_reduce_add_ps(_mm512_add_ps(_mm512_add_ps(s0, s1), _mm512_add_ps(s2, s3)));
}
#else
inline float tile_dot(const float* a, const float* b) {
  float s0 = 0, s1 = 0, s2 = 0, s3 = 0;
  for (int j = 0; j < 16; ++j) {
    s0 += a[j] * b[j];
    s1 += a[j + 16] * b[j + 16];
    s2 += a[j + 32] * b[j + 32];
    s3 += a[j + 48] * b[j + 48];
  }
  return (s0 + s1) + (s2 + s3);
}
#endif

// grad wrt kernels: gw[co][k] = sum_{n,m} go[n,co,m] * X[n,k,m].
// Deterministic order: per n ascending, per tile ascending, lane-tree
// reduction within a tile, f64 accumulation across tiles. Output-channel
// groups of 8 keep the staged tile streaming once per group.
void conv_grad_kernels(const ConvDims& d, const float* in, const float* go,
                       std::vector<double>& gw64) {
  const int K = d.cin * d.kh * d.kw;
  const std::size_t plane = static_cast<std::size_t>(d.oh) * d.ow;
  const int tiles = static_cast<int>((plane + kTile - 1) / kTile);
  std::vector<std::vector<double>> partial(static_cast<std::size_t>(d.n));
  parallel_for(static_cast<std::size_t>(d.n), [&](std::size_t n) {
    std::vector<double>& gw = partial[n];
    gw.assign(static_cast<std::size_t>(d.cout) * K, 0.0);
    std::vector<float> xs(static_cast<std::size_t>(K) * kTile);
    alignas(64) float gt[8][kTile];
    const float* go_n = go + n * d.cout * plane;
    for (int t = 0; t < tiles; ++t) {
      const int m0 = t * kTile;
      const int tile = std::min<int>(kTile, static_cast<int>(plane) - m0);
      stage_tile(d, in + n * d.cin * d.h * d.w, m0, tile, xs.data());
      for (int cog = 0; cog < d.cout; cog += 8) {
        const int rows = std::min(8, d.cout - cog);
        for (int c = 0; c < rows; ++c) {
          std::memcpy(gt[c], go_n + static_cast<std::size_t>(cog + c) * plane + m0,
                      sizeof(float) * tile);
          if (tile < kTile) std::memset(gt[c] + tile, 0, sizeof(float) * (kTile - tile));
        }
        for (int k = 0; k < K; ++k) {
          const float* x = xs.data() + static_cast<std::size_t>(k) * kTile;
          for (int c = 0; c < rows; ++c)
            gw[static_cast<std::size_t>(cog + c) * K + k] += tile_dot(gt[c], x);
        }
      }
    }
  });
  for (int n = 0; n < d.n; ++n)
    for (std::size_t i = 0; i < gw64.size(); ++i) gw64[i] += partial[n][i];
}

// For stride 1 the input gradient is itself a convolution of the output
// gradient with the channel-transposed, spatially flipped kernels at
// pad' = (k-1)*dilation - pad, which reuses the fast forward path.
bool conv_grad_input_as_conv(const ConvDims& d, const float* ker, const float* go,
                             float* gin) {
  if (d.spec.stride[0] != 1 || d.spec.stride[1] != 1) return false;
  const int py = (d.kh - 1) * d.spec.dilation[0] - d.spec.pad[0];
  const int px = (d.kw - 1) * d.spec.dilation[1] - d.spec.pad[1];
  if (py < 0 || px < 0) return false;
  std::vector<float> flipped(static_cast<std::size_t>(d.cin) * d.cout * d.kh * d.kw);
  for (int co = 0; co < d.cout; ++co)
    for (int ci = 0; ci < d.cin; ++ci)
      for (int ky = 0; ky < d.kh; ++ky)
        for (int kx = 0; kx < d.kw; ++kx)
          flipped[((static_cast<std::size_t>(ci) * d.cout + co) * d.kh + (d.kh - 1 - ky)) *
                      d.kw +
                  (d.kw - 1 - kx)] =
              ker[((static_cast<std::size_t>(co) * d.cin + ci) * d.kh + ky) * d.kw + kx];
  ConvDims b;
  b.n = d.n;
  b.cin = d.cout;
  b.h = d.oh;
  b.w = d.ow;
  b.cout = d.cin;
  b.kh = d.kh;
  b.kw = d.kw;
  b.spec.stride = {1, 1};
  b.spec.pad = {py, px};
  b.spec.dilation = d.spec.dilation;
  b.oh = d.h;
  b.ow = d.w;
  conv_forward_fast(b, go, flipped.data(), nullptr, gin);
  return true;
}

// Strided fallback: dx_col[k][m] = sum_co W[co][k] * go[co][m], then a
// col2im scatter-add. Tiles are processed in ascending order per sample;
// samples are independent.
void conv_grad_input_col(const ConvDims& d, const float* ker, const float* go,
                         float* gin) {
  const int K = d.cin * d.kh * d.kw;
  const std::size_t plane = static_cast<std::size_t>(d.oh) * d.ow;
  const int tiles = static_cast<int>((plane + kTile - 1) / kTile);
  const int sy = d.spec.stride[0], sx = d.spec.stride[1];
  const int dy = d.spec.dilation[0], dx = d.spec.dilation[1];
  parallel_for(static_cast<std::size_t>(d.n), [&](std::size_t n) {
    std::vector<float> go_t(static_cast<std::size_t>(d.cout) * kTile);
    std::vector<float> dx_col(static_cast<std::size_t>(K) * kTile);
    const float* go_n = go + n * d.cout * plane;
    float* gin_n = gin + n * d.cin * d.h * d.w;
    for (int t = 0; t < tiles; ++t) {
      const int m0 = t * kTile;
      const int tile = std::min<int>(kTile, static_cast<int>(plane) - m0);
      for (int co = 0; co < d.cout; ++co) {
        float* dst = go_t.data() + static_cast<std::size_t>(co) * kTile;
        std::memcpy(dst, go_n + static_cast<std::size_t>(co) * plane + m0,
                    sizeof(float) * tile);
        if (tile < kTile) std::memset(dst + tile, 0, sizeof(float) * (kTile - tile));
      }
      for (int k0 = 0; k0 < K; k0 += 6) {
        const int rows = std::min(6, K - k0);
        float* outp = dx_col.data() + static_cast<std::size_t>(k0) * kTile;
        std::memset(outp, 0, sizeof(float) * rows * kTile);
        for (int co = 0; co < d.cout; ++co) {
          const float* g = go_t.data() + static_cast<std::size_t>(co) * kTile;
          for (int r = 0; r < rows; ++r) {
            const float wr = ker[static_cast<std::size_t>(co) * K + k0 + r];
            float* o = outp + static_cast<std::size_t>(r) * kTile;
#pragma omp simd
            for (int j = 0; j < kTile; ++j) o[j] = std::fma(wr, g[j], o[j]);
          }
        }
      }
      int k = 0;
      for (int ci = 0; ci < d.cin; ++ci) {
        float* plane_in = gin_n + static_cast<std::size_t>(ci) * d.h * d.w;
        for (int ky = 0; ky < d.kh; ++ky)
          for (int kx = 0; kx < d.kw; ++kx, ++k) {
            const float* col = dx_col.data() + static_cast<std::size_t>(k) * kTile;
            for (int j = 0; j < tile; ++j) {
              const int m = m0 + j;
              const int iy = (m / d.ow) * sy - d.spec.pad[0] + ky * dy;
              const int ix = (m % d.ow) * sx - d.spec.pad[1] + kx * dx;
              if (iy >= 0 && iy < d.h && ix >= 0 && ix < d.w)
                plane_in[static_cast<std::size_t>(iy) * d.w + ix] += col[j];
            }
          }
      }
    }
  });
}

void conv_backward(const ConvDims& d, const detail::NodePtr& in_n,
                   const detail::NodePtr& k_n, const detail::NodePtr& b_n,
                   const detail::NodePtr& out_n) {
  const float* go = out_n->grad.data();
  if (detail::wants_grad(k_n)) {
    const int K = d.cin * d.kh * d.kw;
    std::vector<double> gw64(static_cast<std::size_t>(d.cout) * K, 0.0);
    conv_grad_kernels(d, in_n->value.data(), go, gw64);
    auto& gk = detail::grad_buf(k_n);
    for (std::size_t i = 0; i < gk.size(); ++i) gk[i] += static_cast<float>(gw64[i]);
  }
  if (b_n && detail::wants_grad(b_n)) {
    auto& gb = detail::grad_buf(b_n);
    const std::size_t plane = static_cast<std::size_t>(d.oh) * d.ow;
    for (int co = 0; co < d.cout; ++co) {
      double s = 0.0;
      for (int n = 0; n < d.n; ++n) {
        const float* p = go + (static_cast<std::size_t>(n) * d.cout + co) * plane;
        for (std::size_t i = 0; i < plane; ++i) s += p[i];
      }
      gb[co] += static_cast<float>(s);
    }
  }
  if (detail::wants_grad(in_n)) {
    std::vector<float> gin(in_n->value.size());
    if (!conv_grad_input_as_conv(d, k_n->value.data(), go, gin.data())) {
      std::fill(gin.begin(), gin.end(), 0.0f);
      conv_grad_input_col(d, k_n->value.data(), go, gin.data());
    }
    detail::accum_grad_span(in_n, gin);
  }
}

}  // namespace

void set_conv_backend(ConvBackend backend) { g_backend = backend; }
ConvBackend conv_backend() { return g_backend; }

std::array<int, 2> conv2d_output_hw(int h, int w, int kh, int kw,
                                    const Conv2dSpec& spec) {
  const int eff_h = (kh - 1) * spec.dilation[0] + 1;
  const int eff_w = (kw - 1) * spec.dilation[1] + 1;
  if (eff_h > h + 2 * spec.pad[0] || eff_w > w + 2 * spec.pad[1])
    throw ShapeError("conv2d: effective kernel extent exceeds padded input");
  return {(h + 2 * spec.pad[0] - eff_h) / spec.stride[0] + 1,
          (w + 2 * spec.pad[1] - eff_w) / spec.stride[1] + 1};
}

Tensor conv2d(const Tensor& input, const Tensor& kernels,
              const std::optional<Tensor>& bias, const Conv2dSpec& spec) {
  const ConvDims d = check_conv(input, kernels, bias, spec);
  Tensor out = Tensor::zeros({d.n, d.cout, d.oh, d.ow});
  const float* bias_p = bias ? bias->data() : nullptr;
  if (g_backend == ConvBackend::Fast)
    conv_forward_fast(d, input.data(), kernels.data(), bias_p, out.data());
  else
    conv_forward_direct(d, input.data(), kernels.data(), bias_p, out.data());

  const bool track = detail::tracking_enabled({&input, &kernels}) ||
                     (bias && detail::tracking_enabled({&*bias}));
  if (track) {
    auto in_n = input.node();
    auto k_n = kernels.node();
    auto b_n = bias ? bias->node() : detail::NodePtr{};
    auto out_n = out.node();
    std::vector<detail::NodePtr> inputs{in_n, k_n};
    if (b_n) inputs.push_back(b_n);
    Tape::current()->record(inputs, out_n, [d, in_n, k_n, b_n, out_n]() {
      conv_backward(d, in_n, k_n, b_n, out_n);
    });
  }
  return out;
}

std::pair<Tensor, Tensor> conv2d_pair(const Tensor& input, const Tensor& kernels_a,
                                      const Tensor& bias_a, const Tensor& kernels_b,
                                      const Tensor& bias_b, const Conv2dSpec& spec) {
  if (kernels_a.shape() != kernels_b.shape())
    throw ShapeError("conv2d_pair: kernel sets must share a shape");
  const ConvDims d = check_conv(input, kernels_a, bias_a, spec);
  Tensor out_a = Tensor::zeros({d.n, d.cout, d.oh, d.ow});
  Tensor out_b = Tensor::zeros({d.n, d.cout, d.oh, d.ow});
  if (g_backend == ConvBackend::Fast) {
    KernelSet sets[2] = {{kernels_a.data(), bias_a.data(), out_a.data()},
                         {kernels_b.data(), bias_b.data(), out_b.data()}};
    conv_forward_fast_multi(d, input.data(), sets, 2);
  } else {
    conv_forward_direct(d, input.data(), kernels_a.data(), bias_a.data(), out_a.data());
    conv_forward_direct(d, input.data(), kernels_b.data(), bias_b.data(), out_b.data());
  }
  if (detail::tracking_enabled({&input, &kernels_a, &bias_a, &kernels_b, &bias_b})) {
    auto in_n = input.node();
    auto ka_n = kernels_a.node(), ba_n = bias_a.node();
    auto kb_n = kernels_b.node(), bb_n = bias_b.node();
    auto oa_n = out_a.node(), ob_n = out_b.node();
    // two records, one per output, each pulling grads through its own kernels
    Tape::current()->record({in_n, ka_n, ba_n}, oa_n, [d, in_n, ka_n, ba_n, oa_n]() {
      conv_backward(d, in_n, ka_n, ba_n, oa_n);
    });
    Tape::current()->record({in_n, kb_n, bb_n}, ob_n, [d, in_n, kb_n, bb_n, ob_n]() {
      conv_backward(d, in_n, kb_n, bb_n, ob_n);
    });
  }
  return {out_a, out_b};
}

}  // namespace crfseg
