#pragma once

#include <array>
#include <string>
#include <vector>

#include "crfseg/net_params.hpp"
#include "crfseg/ops.hpp"

namespace crfseg {

/// Model family. Cnn* variants predict a softmax segmentation straight from
/// the head; *Rnn variants emit CRF potentials and run mean-field inference;
/// *Gan variants add the adversarial loss.
enum class Variant { Cnn, CnnGan, CnnRnn, CnnRnnGan };

bool variant_uses_crf(Variant v);
bool variant_uses_gan(Variant v);
Variant variant_from_string(const std::string& s);
std::string to_string(Variant v);

/// How the initial-segmentation conditioning enters a block: added to the
/// gated activation output (default), or to both pre-activations.
enum class BiasConditioning { PostGate, PreActivation };

/// Largest number of dilated blocks whose receptive field, 2^(q+1)+1 pixels
/// including the stem, still fits the smaller image side.
int num_blocks(int h, int w);

struct GeneratorConfig {
  int num_labels = 3;
  std::array<int, 2> input_hw{96, 96};
  int stem_channels = 32;
  int block_channels = 64;
  int head_channels = 160;
  Variant variant = Variant::CnnRnnGan;
  BiasConditioning bias_mode = BiasConditioning::PostGate;

  int blocks() const { return num_blocks(input_hw[0], input_hw[1]); }
  void validate() const;
};

struct GeneratorBlockParams {
  ConvParams filter, gate;              // dilated 3x3, dilation 2^b
  ConvParams bias_proj;                 // 1x1 from the initial segmentation (PostGate)
  ConvParams bias_filter, bias_gate;    // 1x1 pair (PreActivation)
  ConvParams residual, skip;            // 1x1
};

struct GeneratorParams {
  ConvParams stem;
  std::vector<GeneratorBlockParams> blocks;
  ConvParams head;
  ConvParams unary_head;   // P kernels, no nonlinearity
  ConvParams kernel_head;  // 4 kernels, exponential units

  static GeneratorParams init(const GeneratorConfig& cfg, std::mt19937& rng);
  void visit(const GeneratorConfig& cfg, const ParamVisitor& fn);
};

/// psi_u is [N,P,h,w]. For CRF variants k is the strictly positive [N,4,h,w]
/// kernel tensor; Cnn variants leave it undefined (the head is unused) and
/// read psi_u as softmax scores instead of costs.
struct GeneratorOutput {
  Tensor psi_u;
  Tensor k;
};

GeneratorOutput generator_forward(const Tensor& image, const Tensor& init_seg,
                                  GeneratorParams& params, const GeneratorConfig& cfg);

/// Closed-form parameter count for the configuration (asserted in tests).
std::size_t generator_param_count(const GeneratorConfig& cfg);

}  // namespace crfseg
