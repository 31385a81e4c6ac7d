#pragma once

// Independent reference implementations used only by tests. These are kept
// deliberately naive (f64, plain loops, no shared code with the library
// kernels) so they can serve as oracles for the production paths.

#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <vector>

namespace oracle {

struct ConvShape {
  int n, cin, h, w;
  int cout, kh, kw;
  int sy = 1, sx = 1, py = 0, px = 0, dy = 1, dx = 1;
  int oh() const { return (h + 2 * py - ((kh - 1) * dy + 1)) / sy + 1; }
  int ow() const { return (w + 2 * px - ((kw - 1) * dx + 1)) / sx + 1; }
};

// Direct nested-loop convolution, f64 everywhere.
inline std::vector<double> conv2d(std::span<const float> in, std::span<const float> ker,
                                  const float* bias, const ConvShape& s) {
  std::vector<double> out(static_cast<std::size_t>(s.n) * s.cout * s.oh() * s.ow(), 0.0);
  for (int n = 0; n < s.n; ++n)
    for (int co = 0; co < s.cout; ++co)
      for (int oy = 0; oy < s.oh(); ++oy)
        for (int ox = 0; ox < s.ow(); ++ox) {
          double acc = bias ? bias[co] : 0.0;
          for (int ci = 0; ci < s.cin; ++ci)
            for (int ky = 0; ky < s.kh; ++ky)
              for (int kx = 0; kx < s.kw; ++kx) {
                const int iy = oy * s.sy - s.py + ky * s.dy;
                const int ix = ox * s.sx - s.px + kx * s.dx;
                if (iy < 0 || iy >= s.h || ix < 0 || ix >= s.w) continue;
                const double w =
                    ker[((static_cast<std::size_t>(co) * s.cin + ci) * s.kh + ky) * s.kw + kx];
                const double v =
                    in[((static_cast<std::size_t>(n) * s.cin + ci) * s.h + iy) * s.w + ix];
                acc += w * v;
              }
          out[((static_cast<std::size_t>(n) * s.cout + co) * s.oh() + oy) * s.ow() + ox] = acc;
        }
  return out;
}

}  // namespace oracle
