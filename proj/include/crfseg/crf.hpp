#pragma once

#include <vector>

#include "crfseg/label_map.hpp"
#include "crfseg/ops.hpp"
#include "crfseg/tensor.hpp"

namespace crfseg {

// Four-connected conditional random field.
//
// The pairwise kernel tensor k has one channel per shift direction in the
// order up, right, down, left. Channel d of pixel i weights the interaction
// with the neighbor whose value reaches i under spatial_shift(Q, d); since
// shifting content up brings the row below, k[Up] at pixel i belongs to the
// edge between i and the pixel BELOW it, and k[Left] at i to the edge with
// the pixel to its RIGHT. gibbs_energy enumerates each undirected edge once
// through the same association, so the energy and the message passing layer
// read k identically.

/// Unary potential (cost units) and strictly positive pairwise kernels for
/// one image: psi_u is [P,h,w], k is [4,h,w].
struct CrfPotentials {
  Tensor psi_u;
  Tensor k;
};

/// Label compatibility mu[l,l'], the cost of labeling a pixel l while the
/// neighbor contributing the message carries l'. Not assumed symmetric.
struct CompatibilityMatrix {
  Tensor mu;  // [P,P]

  int num_labels() const { return mu.dim(0); }
  static CompatibilityMatrix potts(int num_labels, bool requires_grad = false);
};

/// Factorized per-pixel marginals; `iterates` holds Q after every update
/// (iterates.front() is the initialization, iterates.back() == q).
struct MeanFieldState {
  Tensor q;
  std::vector<Tensor> iterates;
};

enum class QInit {
  SoftmaxNegPsi,  // Q0 = softmax(-psi_u): a proper distribution
  RawPsi,         // Q0 = psi_u taken literally
};

/// Gibbs energy of a discrete labeling: sum of unary costs plus, for every
/// undirected four-connected edge counted once, mu(x_i, x_j) * k(edge).
double gibbs_energy(const LabelMap& labeling, const CrfPotentials& pots,
                    const CompatibilityMatrix& mu);

/// Marginals of exp(-E)/Z by full enumeration. Only for tiny instances:
/// P^(h*w) must not exceed 2^20.
Tensor exact_marginals(const CrfPotentials& pots, const CompatibilityMatrix& mu);

/// Full-precision variant of exact_marginals (row-major [P][h][w] doubles);
/// the enumeration runs in f64 and an f32 tensor cannot carry its accuracy.
std::vector<double> exact_marginals_f64(const CrfPotentials& pots,
                                        const CompatibilityMatrix& mu);

/// Message passing: sum over directions of shift_d(Q) ⊙ k_d, with k_d
/// broadcast across the P channels. Accepts [P,h,w] with [4,h,w] or batched
/// [N,P,h,w] with [N,4,h,w].
Tensor message_passing(const Tensor& q, const Tensor& k);

/// 1x1 convolution of the message tensor with mu (no bias term), so zero
/// messages stay zero.
Tensor compatibility_transform(const Tensor& m, const CompatibilityMatrix& mu);

/// Q = softmax(-psi_u - C) per pixel.
Tensor local_update_normalize(const Tensor& c, const Tensor& psi_u);

/// Runs `iterations` rounds of message passing, compatibility transform and
/// local update; differentiable end to end. Accepts single or batched
/// potentials like message_passing.
MeanFieldState mean_field_infer(const CrfPotentials& pots, const CompatibilityMatrix& mu,
                                int iterations = 5, QInit init = QInit::SoftmaxNegPsi);

/// Batched entry point used by the networks: psi_u [N,P,h,w], k [N,4,h,w].
MeanFieldState mean_field_infer_batch(const Tensor& psi_u, const Tensor& k,
                                      const CompatibilityMatrix& mu, int iterations = 5,
                                      QInit init = QInit::SoftmaxNegPsi);

}  // namespace crfseg
