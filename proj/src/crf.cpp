#include "crfseg/crf.hpp"

#include <cmath>

namespace crfseg {

namespace {

// Lifts [C,h,w] to [1,C,h,w]; batched tensors pass through.
Tensor as_batched(const Tensor& t, const char* what) {
  if (t.rank() == 4) return reshape(t, t.shape());
  if (t.rank() == 3) return reshape(t, {1, t.dim(0), t.dim(1), t.dim(2)});
  throw ShapeError(std::string(what) + ": expected rank 3 or 4, got " +
                   shape_str(t.shape()));
}

void check_potentials(const CrfPotentials& pots) {
  if (pots.psi_u.rank() != 3)
    throw ShapeError("CrfPotentials: psi_u must be [P,h,w]");
  if (pots.k.rank() != 3 || pots.k.dim(0) != 4)
    throw ShapeError("CrfPotentials: k must be [4,h,w]");
  if (pots.k.dim(1) != pots.psi_u.dim(1) || pots.k.dim(2) != pots.psi_u.dim(2))
    throw ShapeError("CrfPotentials: psi_u and k disagree on the grid size");
}

}  // namespace

CompatibilityMatrix CompatibilityMatrix::potts(int num_labels, bool requires_grad) {
  Tensor mu = Tensor::full({num_labels, num_labels}, 1.0f, requires_grad);
  for (int l = 0; l < num_labels; ++l) mu.data()[l * num_labels + l] = 0.0f;
  return CompatibilityMatrix{mu};
}

double gibbs_energy(const LabelMap& labeling, const CrfPotentials& pots,
                    const CompatibilityMatrix& mu) {
  check_potentials(pots);
  const int p = pots.psi_u.dim(0), h = pots.psi_u.dim(1), w = pots.psi_u.dim(2);
  if (labeling.h != h || labeling.w != w)
    throw ShapeError("gibbs_energy: labeling grid does not match potentials");
  labeling.require_classes_below(p);
  if (mu.num_labels() != p)
    throw ShapeError("gibbs_energy: compatibility matrix size mismatch");

  const float* psi = pots.psi_u.data();
  const float* k = pots.k.data();
  const float* m = mu.mu.data();
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  const std::size_t kUp = 0 * hw, kLeft = 3 * hw;

  double e = 0.0;
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      const std::size_t i = static_cast<std::size_t>(r) * w + c;
      const int xi = labeling(r, c);
      e += psi[static_cast<std::size_t>(xi) * hw + i];
      if (r + 1 < h) {  // edge to the pixel below: k[Up] at i
        const int xj = labeling(r + 1, c);
        e += static_cast<double>(m[xi * p + xj]) * k[kUp + i];
      }
      if (c + 1 < w) {  // edge to the pixel on the right: k[Left] at i
        const int xj = labeling(r, c + 1);
        e += static_cast<double>(m[xi * p + xj]) * k[kLeft + i];
      }
    }
  return e;
}

std::vector<double> exact_marginals_f64(const CrfPotentials& pots,
                                        const CompatibilityMatrix& mu) {
  check_potentials(pots);
  const int p = pots.psi_u.dim(0), h = pots.psi_u.dim(1), w = pots.psi_u.dim(2);
  const int sites = h * w;
  double states = 1.0;
  for (int i = 0; i < sites; ++i) {
    states *= p;
    if (states > static_cast<double>(1 << 20))
      throw ValueError("exact_marginals: more than 2^20 labelings");
  }
  const auto total = static_cast<std::uint64_t>(states);

  auto advance = [&](LabelMap& lm) {
    for (int i = 0; i < sites; ++i) {
      if (++lm.at[i] < p) return true;
      lm.at[i] = 0;
    }
    return false;
  };

  // first pass for the minimum energy keeps exp() well ranged
  double e_min;
  {
    LabelMap probe(h, w, 0);
    e_min = gibbs_energy(probe, pots, mu);
    while (advance(probe)) e_min = std::min(e_min, gibbs_energy(probe, pots, mu));
  }

  std::vector<double> acc(static_cast<std::size_t>(p) * sites, 0.0);
  double z = 0.0;
  LabelMap lm(h, w, 0);
  std::uint64_t visited = 0;
  do {
    const double wgt = std::exp(-(gibbs_energy(lm, pots, mu) - e_min));
    z += wgt;
    for (int i = 0; i < sites; ++i)
      acc[static_cast<std::size_t>(lm.at[i]) * sites + i] += wgt;
    ++visited;
  } while (advance(lm));
  if (visited != total) throw NumericError("exact_marginals: enumeration miscount");

  for (double& v : acc) v /= z;
  return acc;
}

Tensor exact_marginals(const CrfPotentials& pots, const CompatibilityMatrix& mu) {
  const std::vector<double> m = exact_marginals_f64(pots, mu);
  Tensor out = Tensor::zeros(
      {pots.psi_u.dim(0), pots.psi_u.dim(1), pots.psi_u.dim(2)});
  for (std::size_t i = 0; i < m.size(); ++i) out.data()[i] = static_cast<float>(m[i]);
  return out;
}

Tensor message_passing(const Tensor& q, const Tensor& k) {
  const bool single = q.rank() == 3;
  Tensor qb = as_batched(q, "message_passing");
  Tensor kb = as_batched(k, "message_passing");
  if (kb.dim(1) != 4) throw ShapeError("message_passing: k must have 4 channels");
  if (qb.dim(0) != kb.dim(0) || qb.dim(2) != kb.dim(2) || qb.dim(3) != kb.dim(3))
    throw ShapeError("message_passing: Q " + shape_str(qb.shape()) + " vs k " +
                     shape_str(kb.shape()));
  Tensor m;
  for (int d = 0; d < 4; ++d) {
    Tensor shifted = spatial_shift(qb, static_cast<ShiftDir>(d));
    Tensor term = mul_channel_broadcast(shifted, channel_slice(kb, d, 1));
    m = d == 0 ? term : add(m, term);
  }
  if (single) return reshape(m, {m.dim(1), m.dim(2), m.dim(3)});
  return m;
}

Tensor compatibility_transform(const Tensor& m, const CompatibilityMatrix& mu) {
  const bool single = m.rank() == 3;
  Tensor mb = as_batched(m, "compatibility_transform");
  const int p = mu.num_labels();
  if (mb.dim(1) != p)
    throw ShapeError("compatibility_transform: " + std::to_string(mb.dim(1)) +
                     " channels vs " + std::to_string(p) + " labels");
  Tensor kernels = reshape(mu.mu, {p, p, 1, 1});
  Tensor out = conv2d(mb, kernels);
  if (single) return reshape(out, {out.dim(1), out.dim(2), out.dim(3)});
  return out;
}

Tensor local_update_normalize(const Tensor& c, const Tensor& psi_u) {
  if (c.shape() != psi_u.shape())
    throw ShapeError("local_update_normalize: shape mismatch");
  const bool single = c.rank() == 3;
  Tensor cb = as_batched(c, "local_update_normalize");
  Tensor pb = as_batched(psi_u, "local_update_normalize");
  Tensor out = softmax_channels(neg(add(pb, cb)));
  if (single) return reshape(out, {out.dim(1), out.dim(2), out.dim(3)});
  return out;
}

MeanFieldState mean_field_infer_batch(const Tensor& psi_u, const Tensor& k,
                                      const CompatibilityMatrix& mu, int iterations,
                                      QInit init) {
  if (psi_u.rank() != 4 || k.rank() != 4)
    throw ShapeError("mean_field_infer_batch: expected [N,P,h,w] and [N,4,h,w]");
  if (iterations < 1) throw ValueError("mean_field_infer: iterations must be >= 1");
  MeanFieldState state;
  Tensor q = init == QInit::SoftmaxNegPsi ? softmax_channels(neg(psi_u))
                                          : reshape(psi_u, psi_u.shape());
  state.iterates.push_back(q);
  for (int it = 0; it < iterations; ++it) {
    Tensor m = message_passing(q, k);
    Tensor c = compatibility_transform(m, mu);
    q = local_update_normalize(c, psi_u);
    state.iterates.push_back(q);
  }
  state.q = q;
  return state;
}

MeanFieldState mean_field_infer(const CrfPotentials& pots, const CompatibilityMatrix& mu,
                                int iterations, QInit init) {
  check_potentials(pots);
  const int p = pots.psi_u.dim(0), h = pots.psi_u.dim(1), w = pots.psi_u.dim(2);
  Tensor psi = reshape(pots.psi_u, {1, p, h, w});
  Tensor k = reshape(pots.k, {1, 4, h, w});
  MeanFieldState batched = mean_field_infer_batch(psi, k, mu, iterations, init);
  MeanFieldState out;
  for (Tensor& t : batched.iterates) out.iterates.push_back(reshape(t, {p, h, w}));
  out.q = out.iterates.back();
  return out;
}

}  // namespace crfseg
