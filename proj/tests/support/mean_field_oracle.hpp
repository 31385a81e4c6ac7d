#pragma once

// Scalar-loop mean-field reference, written independently of the tensor
// implementation: plain f64 arrays, std::exp, explicit neighbor indexing.
// Shift semantics follow spatial_shift: shifting Q in direction d delivers,
// at pixel (r,c), the value of the source pixel listed below, multiplied by
// k[d](r,c).

#include <cmath>
#include <cstddef>
#include <vector>

namespace testsupport {

struct MeanFieldInstance {
  int p, h, w;
  std::vector<double> psi;  // [p][h][w]
  std::vector<double> k;    // [4][h][w], order up,right,down,left
  std::vector<double> mu;   // [p][p]
};

// Returns all iterates: element 0 is the initialization.
inline std::vector<std::vector<double>> mean_field_reference(
    const MeanFieldInstance& in, int iterations, bool raw_init = false) {
  const int p = in.p, h = in.h, w = in.w;
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  auto softmax_neg = [&](const std::vector<double>& cost) {
    std::vector<double> q(p * hw);
    for (std::size_t i = 0; i < hw; ++i) {
      double best = -cost[i];
      for (int l = 1; l < p; ++l) best = std::max(best, -cost[l * hw + i]);
      double z = 0.0;
      for (int l = 0; l < p; ++l) {
        q[l * hw + i] = std::exp(-cost[l * hw + i] - best);
        z += q[l * hw + i];
      }
      for (int l = 0; l < p; ++l) q[l * hw + i] /= z;
    }
    return q;
  };

  std::vector<std::vector<double>> iterates;
  if (raw_init)
    iterates.push_back(in.psi);
  else
    iterates.push_back(softmax_neg(in.psi));

  // source pixel delivered by each shift direction
  const int dr[4] = {+1, 0, -1, 0};  // up, right, down, left
  const int dc[4] = {0, -1, 0, +1};

  for (int it = 0; it < iterations; ++it) {
    const std::vector<double>& q = iterates.back();
    std::vector<double> msg(p * hw, 0.0);
    for (int l = 0; l < p; ++l)
      for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
          double s = 0.0;
          for (int d = 0; d < 4; ++d) {
            const int sr = r + dr[d], sc = c + dc[d];
            if (sr < 0 || sr >= h || sc < 0 || sc >= w) continue;
            s += in.k[d * hw + static_cast<std::size_t>(r) * w + c] *
                 q[l * hw + static_cast<std::size_t>(sr) * w + sc];
          }
          msg[l * hw + static_cast<std::size_t>(r) * w + c] = s;
        }
    std::vector<double> cost(p * hw);
    for (int l = 0; l < p; ++l)
      for (std::size_t i = 0; i < hw; ++i) {
        double s = 0.0;
        for (int lp = 0; lp < p; ++lp) s += in.mu[l * p + lp] * msg[lp * hw + i];
        cost[l * hw + i] = in.psi[l * hw + i] + s;
      }
    iterates.push_back(softmax_neg(cost));
  }
  return iterates;
}

}  // namespace testsupport
