#include "crfseg/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "crfseg/fast_math.hpp"

namespace crfseg {

namespace {

using detail::accum_grad_span;
using detail::grad_buf;
using detail::NodePtr;
using detail::wants_grad;

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
}

void require_rank4(const Tensor& t, const char* op) {
  if (t.rank() != 4)
    throw ShapeError(std::string(op) + ": expected rank-4 tensor, got " +
                     shape_str(t.shape()));
}

void record1(const Tensor& x, const Tensor& y, std::function<void()> fn) {
  if (detail::tracking_enabled({&x}))
    Tape::current()->record({x.node()}, y.node(), std::move(fn));
}

void record2(const Tensor& a, const Tensor& b, const Tensor& y,
             std::function<void()> fn) {
  if (detail::tracking_enabled({&a, &b}))
    Tape::current()->record({a.node(), b.node()}, y.node(), std::move(fn));
}

}  // namespace

// ------------------------------------------------------------- shift

ShiftDir opposite(ShiftDir dir) {
  switch (dir) {
    case ShiftDir::Up: return ShiftDir::Down;
    case ShiftDir::Right: return ShiftDir::Left;
    case ShiftDir::Down: return ShiftDir::Up;
    default: return ShiftDir::Right;
  }
}

namespace {

void shift_plane(const float* in, float* out, int h, int w, ShiftDir dir) {
  switch (dir) {
    case ShiftDir::Up:  // out(r,c) = in(r+1,c)
      std::memcpy(out, in + w, sizeof(float) * static_cast<std::size_t>(h - 1) * w);
      std::memset(out + static_cast<std::size_t>(h - 1) * w, 0, sizeof(float) * w);
      break;
    case ShiftDir::Down:  // out(r,c) = in(r-1,c)
      std::memset(out, 0, sizeof(float) * w);
      std::memcpy(out + w, in, sizeof(float) * static_cast<std::size_t>(h - 1) * w);
      break;
    case ShiftDir::Left:  // out(r,c) = in(r,c+1)
      for (int r = 0; r < h; ++r) {
        std::memcpy(out + static_cast<std::size_t>(r) * w,
                    in + static_cast<std::size_t>(r) * w + 1, sizeof(float) * (w - 1));
        out[static_cast<std::size_t>(r) * w + w - 1] = 0.0f;
      }
      break;
    default:  // Right: out(r,c) = in(r,c-1)
      for (int r = 0; r < h; ++r) {
        out[static_cast<std::size_t>(r) * w] = 0.0f;
        std::memcpy(out + static_cast<std::size_t>(r) * w + 1,
                    in + static_cast<std::size_t>(r) * w, sizeof(float) * (w - 1));
      }
      break;
  }
}

}  // namespace

Tensor spatial_shift(const Tensor& input, ShiftDir dir) {
  require_rank4(input, "spatial_shift");
  const int h = input.dim(2), w = input.dim(3);
  if (h < 1 || w < 1) throw ShapeError("spatial_shift: empty spatial extent");
  Tensor out = Tensor::zeros(input.shape());
  const std::size_t planes = input.size() / (static_cast<std::size_t>(h) * w);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  if (h == 1 && (dir == ShiftDir::Up || dir == ShiftDir::Down)) {
    // single row shifts entirely off grid; output stays zero
  } else if (w == 1 && (dir == ShiftDir::Left || dir == ShiftDir::Right)) {
  } else {
    for (std::size_t p = 0; p < planes; ++p)
      shift_plane(input.data() + p * plane, out.data() + p * plane, h, w, dir);
  }
  record1(input, out, [xn = input.node(), yn = out.node(), h, w, dir]() {
    if (!wants_grad(xn)) return;
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    const std::size_t planes = xn->value.size() / plane;
    std::vector<float> g(plane);
    auto& gx = grad_buf(xn);
    const ShiftDir back = opposite(dir);
    const bool degenerate = (h == 1 && (dir == ShiftDir::Up || dir == ShiftDir::Down)) ||
                            (w == 1 && (dir == ShiftDir::Left || dir == ShiftDir::Right));
    if (degenerate) return;
    for (std::size_t p = 0; p < planes; ++p) {
      shift_plane(yn->grad.data() + p * plane, g.data(), h, w, back);
      for (std::size_t i = 0; i < plane; ++i) gx[p * plane + i] += g[i];
    }
  });
  return out;
}

// ----------------------------------------------------------- softmax

Tensor softmax_channels(const Tensor& input) {
  require_rank4(input, "softmax_channels");
  const int n = input.dim(0), p = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  Tensor out = Tensor::zeros(input.shape());
  const float* x = input.data();
  float* y = out.data();
  for (int b = 0; b < n; ++b) {
    const float* xb = x + static_cast<std::size_t>(b) * p * hw;
    float* yb = y + static_cast<std::size_t>(b) * p * hw;
    for (std::size_t i = 0; i < hw; ++i) {
      float m = xb[i];
      for (int c = 1; c < p; ++c) m = std::max(m, xb[c * hw + i]);
      double z = 0.0;
      for (int c = 0; c < p; ++c) {
        const float e = fast_exp(xb[c * hw + i] - m);
        yb[c * hw + i] = e;
        z += e;
      }
      const float inv = static_cast<float>(1.0 / z);
      for (int c = 0; c < p; ++c) yb[c * hw + i] *= inv;
    }
  }
  record1(input, out, [xn = input.node(), yn = out.node(), n, p, hw]() {
    if (!wants_grad(xn)) return;
    auto& gx = grad_buf(xn);
    const float* yv = yn->value.data();
    const float* gy = yn->grad.data();
    for (int b = 0; b < n; ++b) {
      const std::size_t base = static_cast<std::size_t>(b) * p * hw;
      for (std::size_t i = 0; i < hw; ++i) {
        double dot = 0.0;
        for (int c = 0; c < p; ++c)
          dot += static_cast<double>(gy[base + c * hw + i]) * yv[base + c * hw + i];
        for (int c = 0; c < p; ++c) {
          const std::size_t idx = base + c * hw + i;
          gx[idx] += yv[idx] * (gy[idx] - static_cast<float>(dot));
        }
      }
    }
  });
  return out;
}

// -------------------------------------------------------- activations

Tensor activation(const Tensor& input, Act kind, float leaky_slope) {
  Tensor out = Tensor::zeros(input.shape());
  const float* x = input.data();
  float* y = out.data();
  const std::size_t n = input.size();
  switch (kind) {
    case Act::Relu:
      for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > 0.0f ? x[i] : 0.0f;
      break;
    case Act::LeakyRelu:
      for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > 0.0f ? x[i] : leaky_slope * x[i];
      break;
    case Act::Sigmoid:
      fast_sigmoid_array(x, y, n);
      break;
    case Act::Tanh:
      fast_tanh_array(x, y, n);
      break;
    case Act::Exp:
      fast_exp_array(x, y, n);
      break;
  }
  record1(input, out, [xn = input.node(), yn = out.node(), kind, leaky_slope]() {
    if (!wants_grad(xn)) return;
    auto& gx = grad_buf(xn);
    const float* xv = xn->value.data();
    const float* yv = yn->value.data();
    const float* gy = yn->grad.data();
    const std::size_t n = xn->value.size();
    switch (kind) {
      case Act::Relu:
        for (std::size_t i = 0; i < n; ++i) gx[i] += xv[i] > 0.0f ? gy[i] : 0.0f;
        break;
      case Act::LeakyRelu:
        for (std::size_t i = 0; i < n; ++i)
          gx[i] += xv[i] > 0.0f ? gy[i] : leaky_slope * gy[i];
        break;
      case Act::Sigmoid:
        for (std::size_t i = 0; i < n; ++i) gx[i] += gy[i] * yv[i] * (1.0f - yv[i]);
        break;
      case Act::Tanh:
        for (std::size_t i = 0; i < n; ++i) gx[i] += gy[i] * (1.0f - yv[i] * yv[i]);
        break;
      case Act::Exp:
        for (std::size_t i = 0; i < n; ++i) gx[i] += gy[i] * yv[i];
        break;
    }
  });
  return out;
}

Tensor relu(const Tensor& x) { return activation(x, Act::Relu); }
Tensor leaky_relu(const Tensor& x, float slope) {
  return activation(x, Act::LeakyRelu, slope);
}
Tensor sigmoid(const Tensor& x) { return activation(x, Act::Sigmoid); }
Tensor tanh(const Tensor& x) { return activation(x, Act::Tanh); }
Tensor exp(const Tensor& x) { return activation(x, Act::Exp); }

Tensor gated_activation(const Tensor& filter_pre, const Tensor& gate_pre) {
  require_same_shape(filter_pre, gate_pre, "gated_activation");
  return mul(tanh(filter_pre), sigmoid(gate_pre));
}

// --------------------------------------------------------- batch norm

Tensor batch_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                  RunningStats& stats, bool training, float eps) {
  require_rank4(input, "batch_norm");
  const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (gamma.rank() != 1 || gamma.dim(0) != c || beta.rank() != 1 || beta.dim(0) != c)
    throw ShapeError("batch_norm: gamma/beta must be [C]");
  if (static_cast<int>(stats.mean.size()) != c)
    throw ShapeError("batch_norm: running stats sized for wrong channel count");
  const std::size_t m = static_cast<std::size_t>(n) * h * w;
  if (training && m < 2)
    throw ValueError("batch_norm: train mode requires at least 2 values per channel");

  const std::size_t hw = static_cast<std::size_t>(h) * w;
  std::vector<float> mu(c), inv_std(c);
  const float* x = input.data();
  if (training) {
    for (int ch = 0; ch < c; ++ch) {
      double s = 0.0;
      for (int b = 0; b < n; ++b) {
        const float* p = x + (static_cast<std::size_t>(b) * c + ch) * hw;
        for (std::size_t i = 0; i < hw; ++i) s += p[i];
      }
      const double mean = s / static_cast<double>(m);
      double sq = 0.0;
      for (int b = 0; b < n; ++b) {
        const float* p = x + (static_cast<std::size_t>(b) * c + ch) * hw;
        for (std::size_t i = 0; i < hw; ++i) {
          const double d = p[i] - mean;
          sq += d * d;
        }
      }
      const double var = sq / static_cast<double>(m);  // biased, also kept in stats
      mu[ch] = static_cast<float>(mean);
      inv_std[ch] = static_cast<float>(1.0 / std::sqrt(var + eps));
      stats.mean[ch] = stats.momentum * stats.mean[ch] +
                       (1.0f - stats.momentum) * static_cast<float>(mean);
      stats.var[ch] = stats.momentum * stats.var[ch] +
                      (1.0f - stats.momentum) * static_cast<float>(var);
    }
  } else {
    for (int ch = 0; ch < c; ++ch) {
      mu[ch] = stats.mean[ch];
      inv_std[ch] = 1.0f / std::sqrt(stats.var[ch] + eps);
    }
  }

  Tensor out = Tensor::zeros(input.shape());
  float* y = out.data();
  const float* g = gamma.data();
  const float* bt = beta.data();
  for (int b = 0; b < n; ++b)
    for (int ch = 0; ch < c; ++ch) {
      const float* p = x + (static_cast<std::size_t>(b) * c + ch) * hw;
      float* q = y + (static_cast<std::size_t>(b) * c + ch) * hw;
      const float a = g[ch] * inv_std[ch];
      const float o = bt[ch] - a * mu[ch];
      for (std::size_t i = 0; i < hw; ++i) q[i] = a * p[i] + o;
    }

  if (detail::tracking_enabled({&input, &gamma, &beta})) {
    auto xn = input.node();
    auto gn = gamma.node();
    auto bn = beta.node();
    auto yn = out.node();
    Tape::current()->record(
        {xn, gn, bn}, yn,
        [xn, gn, bn, yn, mu = std::move(mu), inv_std = std::move(inv_std), n, c, hw,
         training]() {
          const std::size_t m = static_cast<std::size_t>(n) * hw;
          const float* x = xn->value.data();
          const float* gy = yn->grad.data();
          const float* g = gn->value.data();
          for (int ch = 0; ch < c; ++ch) {
            double sum_gy = 0.0, sum_gy_xhat = 0.0;
            for (int b = 0; b < n; ++b) {
              const std::size_t base = (static_cast<std::size_t>(b) * c + ch) * hw;
              for (std::size_t i = 0; i < hw; ++i) {
                const float xhat = (x[base + i] - mu[ch]) * inv_std[ch];
                sum_gy += gy[base + i];
                sum_gy_xhat += static_cast<double>(gy[base + i]) * xhat;
              }
            }
            if (wants_grad(gn)) grad_buf(gn)[ch] += static_cast<float>(sum_gy_xhat);
            if (wants_grad(bn)) grad_buf(bn)[ch] += static_cast<float>(sum_gy);
            if (wants_grad(xn)) {
              auto& gx = grad_buf(xn);
              const float a = g[ch] * inv_std[ch];
              if (training) {
                const float mean_gy = static_cast<float>(sum_gy / static_cast<double>(m));
                const float mean_gy_xhat =
                    static_cast<float>(sum_gy_xhat / static_cast<double>(m));
                for (int b = 0; b < n; ++b) {
                  const std::size_t base = (static_cast<std::size_t>(b) * c + ch) * hw;
                  for (std::size_t i = 0; i < hw; ++i) {
                    const float xhat = (x[base + i] - mu[ch]) * inv_std[ch];
                    gx[base + i] += a * (gy[base + i] - mean_gy - xhat * mean_gy_xhat);
                  }
                }
              } else {
                for (int b = 0; b < n; ++b) {
                  const std::size_t base = (static_cast<std::size_t>(b) * c + ch) * hw;
                  for (std::size_t i = 0; i < hw; ++i) gx[base + i] += a * gy[base + i];
                }
              }
            }
          }
        });
  }
  return out;
}

// ------------------------------------------------------------- pooling

Tensor global_avg_pool(const Tensor& input) {
  require_rank4(input, "global_avg_pool");
  const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (h < 1 || w < 1) throw ShapeError("global_avg_pool: empty spatial extent");
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  Tensor out = Tensor::zeros({n, c});
  float* y = out.data();
  const float* x = input.data();
  for (int b = 0; b < n; ++b)
    for (int ch = 0; ch < c; ++ch) {
      const float* p = x + (static_cast<std::size_t>(b) * c + ch) * hw;
      double s = 0.0;
      for (std::size_t i = 0; i < hw; ++i) s += p[i];
      y[static_cast<std::size_t>(b) * c + ch] = static_cast<float>(s / static_cast<double>(hw));
    }
  record1(input, out, [xn = input.node(), yn = out.node(), n, c, hw]() {
    if (!wants_grad(xn)) return;
    auto& gx = grad_buf(xn);
    const float* gy = yn->grad.data();
    const float inv = 1.0f / static_cast<float>(hw);
    for (int b = 0; b < n; ++b)
      for (int ch = 0; ch < c; ++ch) {
        const float gv = gy[static_cast<std::size_t>(b) * c + ch] * inv;
        float* p = gx.data() + (static_cast<std::size_t>(b) * c + ch) * hw;
        for (std::size_t i = 0; i < hw; ++i) p[i] += gv;
      }
  });
  return out;
}

// -------------------------------------------------------------- linear

Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  if (input.rank() != 2 || weight.rank() != 2)
    throw ShapeError("linear: expects [N,F] input and [O,F] weight");
  const int n = input.dim(0), f = input.dim(1), o = weight.dim(0);
  if (weight.dim(1) != f) throw ShapeError("linear: weight/input feature mismatch");
  if (bias.rank() != 1 || bias.dim(0) != o) throw ShapeError("linear: bias must be [O]");
  Tensor out = Tensor::zeros({n, o});
  const float* x = input.data();
  const float* wt = weight.data();
  const float* b = bias.data();
  float* y = out.data();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < o; ++j) {
      double s = b[j];
      const float* xr = x + static_cast<std::size_t>(i) * f;
      const float* wr = wt + static_cast<std::size_t>(j) * f;
      for (int k = 0; k < f; ++k) s += static_cast<double>(xr[k]) * wr[k];
      y[static_cast<std::size_t>(i) * o + j] = static_cast<float>(s);
    }
  if (detail::tracking_enabled({&input, &weight, &bias})) {
    auto xn = input.node(), wn = weight.node(), bn = bias.node(), yn = out.node();
    Tape::current()->record({xn, wn, bn}, yn, [xn, wn, bn, yn, n, f, o]() {
      const float* gy = yn->grad.data();
      const float* x = xn->value.data();
      const float* wt = wn->value.data();
      if (wants_grad(wn)) {
        auto& gw = grad_buf(wn);
        for (int j = 0; j < o; ++j)
          for (int k = 0; k < f; ++k) {
            double s = 0.0;
            for (int i = 0; i < n; ++i)
              s += static_cast<double>(gy[static_cast<std::size_t>(i) * o + j]) *
                   x[static_cast<std::size_t>(i) * f + k];
            gw[static_cast<std::size_t>(j) * f + k] += static_cast<float>(s);
          }
      }
      if (wants_grad(bn)) {
        auto& gb = grad_buf(bn);
        for (int j = 0; j < o; ++j) {
          double s = 0.0;
          for (int i = 0; i < n; ++i) s += gy[static_cast<std::size_t>(i) * o + j];
          gb[j] += static_cast<float>(s);
        }
      }
      if (wants_grad(xn)) {
        auto& gx = grad_buf(xn);
        for (int i = 0; i < n; ++i)
          for (int k = 0; k < f; ++k) {
            double s = 0.0;
            for (int j = 0; j < o; ++j)
              s += static_cast<double>(gy[static_cast<std::size_t>(i) * o + j]) *
                   wt[static_cast<std::size_t>(j) * f + k];
            gx[static_cast<std::size_t>(i) * f + k] += static_cast<float>(s);
          }
      }
    });
  }
  return out;
}

// --------------------------------------------------------- elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out = Tensor::zeros(a.shape());
  const float* pa = a.data();
  const float* pb = b.data();
  float* y = out.data();
  for (std::size_t i = 0; i < a.size(); ++i) y[i] = pa[i] + pb[i];
  record2(a, b, out, [an = a.node(), bn = b.node(), yn = out.node()]() {
    if (wants_grad(an)) accum_grad_span(an, yn->grad);
    if (wants_grad(bn)) accum_grad_span(bn, yn->grad);
  });
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor out = Tensor::zeros(a.shape());
  const float* pa = a.data();
  const float* pb = b.data();
  float* y = out.data();
  for (std::size_t i = 0; i < a.size(); ++i) y[i] = pa[i] - pb[i];
  record2(a, b, out, [an = a.node(), bn = b.node(), yn = out.node()]() {
    if (wants_grad(an)) accum_grad_span(an, yn->grad);
    if (wants_grad(bn)) {
      auto& g = grad_buf(bn);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= yn->grad[i];
    }
  });
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out = Tensor::zeros(a.shape());
  const float* pa = a.data();
  const float* pb = b.data();
  float* y = out.data();
  for (std::size_t i = 0; i < a.size(); ++i) y[i] = pa[i] * pb[i];
  record2(a, b, out, [an = a.node(), bn = b.node(), yn = out.node()]() {
    const float* gy = yn->grad.data();
    if (wants_grad(an)) {
      auto& g = grad_buf(an);
      const float* bv = bn->value.data();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i] * bv[i];
    }
    if (wants_grad(bn)) {
      auto& g = grad_buf(bn);
      const float* av = an->value.data();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i] * av[i];
    }
  });
  return out;
}

Tensor neg(const Tensor& a) { return scale(a, -1.0f); }

Tensor scale(const Tensor& a, float c) {
  Tensor out = Tensor::zeros(a.shape());
  const float* pa = a.data();
  float* y = out.data();
  for (std::size_t i = 0; i < a.size(); ++i) y[i] = c * pa[i];
  record1(a, out, [an = a.node(), yn = out.node(), c]() {
    if (!wants_grad(an)) return;
    auto& g = grad_buf(an);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += c * yn->grad[i];
  });
  return out;
}

Tensor one_minus(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  const float* px = x.data();
  float* y = out.data();
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = 1.0f - px[i];
  record1(x, out, [xn = x.node(), yn = out.node()]() {
    if (!wants_grad(xn)) return;
    auto& g = grad_buf(xn);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] -= yn->grad[i];
  });
  return out;
}

Tensor mul_channel_broadcast(const Tensor& x, const Tensor& per_pixel) {
  require_rank4(x, "mul_channel_broadcast");
  require_rank4(per_pixel, "mul_channel_broadcast");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (per_pixel.dim(0) != n || per_pixel.dim(1) != 1 || per_pixel.dim(2) != h ||
      per_pixel.dim(3) != w)
    throw ShapeError("mul_channel_broadcast: broadcast operand must be [N,1,H,W]");
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  Tensor out = Tensor::zeros(x.shape());
  const float* px = x.data();
  const float* pk = per_pixel.data();
  float* y = out.data();
  for (int b = 0; b < n; ++b) {
    const float* kb = pk + static_cast<std::size_t>(b) * hw;
    for (int ch = 0; ch < c; ++ch) {
      const std::size_t base = (static_cast<std::size_t>(b) * c + ch) * hw;
      for (std::size_t i = 0; i < hw; ++i) y[base + i] = px[base + i] * kb[i];
    }
  }
  record2(x, per_pixel, out,
          [xn = x.node(), kn = per_pixel.node(), yn = out.node(), n, c, hw]() {
            const float* gy = yn->grad.data();
            if (wants_grad(xn)) {
              auto& g = grad_buf(xn);
              const float* kv = kn->value.data();
              for (int b = 0; b < n; ++b) {
                const float* kb = kv + static_cast<std::size_t>(b) * hw;
                for (int ch = 0; ch < c; ++ch) {
                  const std::size_t base = (static_cast<std::size_t>(b) * c + ch) * hw;
                  for (std::size_t i = 0; i < hw; ++i) g[base + i] += gy[base + i] * kb[i];
                }
              }
            }
            if (wants_grad(kn)) {
              auto& g = grad_buf(kn);
              const float* xv = xn->value.data();
              for (int b = 0; b < n; ++b) {
                for (std::size_t i = 0; i < hw; ++i) {
                  double s = 0.0;
                  for (int ch = 0; ch < c; ++ch) {
                    const std::size_t idx = (static_cast<std::size_t>(b) * c + ch) * hw + i;
                    s += static_cast<double>(gy[idx]) * xv[idx];
                  }
                  g[static_cast<std::size_t>(b) * hw + i] += static_cast<float>(s);
                }
              }
            }
          });
  return out;
}

Tensor channel_slice(const Tensor& x, int from, int count) {
  require_rank4(x, "channel_slice");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (from < 0 || count < 1 || from + count > c)
    throw ShapeError("channel_slice: range [" + std::to_string(from) + "," +
                     std::to_string(from + count) + ") out of " + std::to_string(c));
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  Tensor out = Tensor::zeros({n, count, h, w});
  for (int b = 0; b < n; ++b)
    std::memcpy(out.data() + static_cast<std::size_t>(b) * count * hw,
                x.data() + (static_cast<std::size_t>(b) * c + from) * hw,
                sizeof(float) * count * hw);
  record1(x, out, [xn = x.node(), yn = out.node(), n, c, from, count, hw]() {
    if (!wants_grad(xn)) return;
    auto& g = grad_buf(xn);
    const float* gy = yn->grad.data();
    for (int b = 0; b < n; ++b) {
      float* dst = g.data() + (static_cast<std::size_t>(b) * c + from) * hw;
      const float* src = gy + static_cast<std::size_t>(b) * count * hw;
      for (std::size_t i = 0; i < static_cast<std::size_t>(count) * hw; ++i) dst[i] += src[i];
    }
  });
  return out;
}

Tensor concat_channels(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no inputs");
  const int n = parts[0].dim(0), h = parts[0].dim(2), w = parts[0].dim(3);
  int total = 0;
  for (const Tensor& t : parts) {
    require_rank4(t, "concat_channels");
    if (t.dim(0) != n || t.dim(2) != h || t.dim(3) != w)
      throw ShapeError("concat_channels: inconsistent shapes");
    total += t.dim(1);
  }
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  Tensor out = Tensor::zeros({n, total, h, w});
  int at = 0;
  for (const Tensor& t : parts) {
    const int c = t.dim(1);
    for (int b = 0; b < n; ++b)
      std::memcpy(out.data() + (static_cast<std::size_t>(b) * total + at) * hw,
                  t.data() + static_cast<std::size_t>(b) * c * hw, sizeof(float) * c * hw);
    at += c;
  }
  bool track = false;
  for (const Tensor& t : parts)
    if (detail::tracking_enabled({&t})) track = true;
  if (track) {
    std::vector<NodePtr> ins;
    std::vector<int> widths;
    for (const Tensor& t : parts) {
      ins.push_back(t.node());
      widths.push_back(t.dim(1));
    }
    auto yn = out.node();
    Tape::current()->record(ins, yn, [ins, widths, yn, n, total, hw]() {
      const float* gy = yn->grad.data();
      int at = 0;
      for (std::size_t pi = 0; pi < ins.size(); ++pi) {
        const int c = widths[pi];
        if (wants_grad(ins[pi])) {
          auto& g = grad_buf(ins[pi]);
          for (int b = 0; b < n; ++b) {
            const float* src = gy + (static_cast<std::size_t>(b) * total + at) * hw;
            float* dst = g.data() + static_cast<std::size_t>(b) * c * hw;
            for (std::size_t i = 0; i < static_cast<std::size_t>(c) * hw; ++i) dst[i] += src[i];
          }
        }
        at += c;
      }
    });
  }
  return out;
}

// ---------------------------------------------------------- reductions

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (float v : x.values()) s += v;
  Tensor out = Tensor::from_vector({1}, {static_cast<float>(s)});
  record1(x, out, [xn = x.node(), yn = out.node()]() {
    if (!wants_grad(xn)) return;
    auto& g = grad_buf(xn);
    const float gy = yn->grad[0];
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy;
  });
  return out;
}

Tensor mean(const Tensor& x) {
  if (x.size() == 0) throw ShapeError("mean of empty tensor");
  return scale(sum(x), 1.0f / static_cast<float>(x.size()));
}

Tensor log_clamped(const Tensor& x, float floor) {
  Tensor out = Tensor::zeros(x.shape());
  const float* px = x.data();
  float* y = out.data();
  for (std::size_t i = 0; i < x.size(); ++i)
    y[i] = std::log(px[i] > floor ? px[i] : floor);
  record1(x, out, [xn = x.node(), yn = out.node(), floor]() {
    if (!wants_grad(xn)) return;
    auto& g = grad_buf(xn);
    const float* xv = xn->value.data();
    const float* gy = yn->grad.data();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (xv[i] > floor) g[i] += gy[i] / xv[i];
  });
  return out;
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.size())
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                     shape_str(shape));
  Tensor out = Tensor::from_vector(std::move(shape),
                                   std::vector<float>(x.values().begin(), x.values().end()));
  record1(x, out, [xn = x.node(), yn = out.node()]() {
    if (wants_grad(xn)) accum_grad_span(xn, yn->grad);
  });
  return out;
}

}  // namespace crfseg
