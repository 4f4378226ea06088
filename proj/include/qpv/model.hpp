// Copyright 2026 qpvoc authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "qpv/autodiff.hpp"
#include "qpv/features.hpp"
#include "qpv/tensor.hpp"

namespace qpv::model {

enum class BlockKind { fixed, adaptive };
enum class GenStructure { single, stacked_af, stacked_fa, parallel };

std::string to_string(GenStructure s);
GenStructure structure_from_string(const std::string& s);

// A stack of residual blocks of one kind. Base dilations run 2^0 .. 2^(n-1)
// within each cycle.
struct MacroblockSpec {
  BlockKind kind = BlockKind::fixed;
  int blocks_per_cycle = 10;
  int cycles = 1;
  int block_count() const { return blocks_per_cycle * cycles; }
};

struct GeneratorConfig {
  GenStructure structure = GenStructure::single;
  std::vector<MacroblockSpec> macroblocks;
  int residual_channels = 64;
  int skip_channels = 64;
  int aux_channels = feat::kAuxChannels;
  double dense_factor = 4.0;
  int sample_rate = 22050;

  void validate() const;
  int total_blocks() const;
  bool has_adaptive() const;
};

// Weight-normalized 1x1 convolution: effective weight is
// g[r] * v[r,:] / ||v[r,:]||, plus a bias.
struct WnConv1x1 {
  Tensor2 v;     // out x in
  Tensor2 gain;  // out x 1
  Tensor2 bias;  // out x 1
};

// Weight-normalized three-tap kernel (center/past/future taps, one shared
// bias on the summed output).
struct WnKernel3 {
  Tensor2 vc, gc;
  Tensor2 vp, gp;
  Tensor2 vf, gf;
  Tensor2 bias;
};

struct ResidualBlock {
  BlockKind kind = BlockKind::fixed;
  int base_dilation = 1;
  int macro_index = 0;
  WnKernel3 conv;   // residual -> 2*residual (gate halves)
  WnConv1x1 aux;    // aux -> 2*residual
  WnConv1x1 res;    // residual -> residual
  WnConv1x1 skip;   // residual -> skip
};

struct NamedTensor {
  std::string name;
  Tensor2* tensor;
};

struct GeneratorModel {
  GeneratorConfig cfg;
  WnConv1x1 input_proj;  // 1 -> residual
  std::vector<ResidualBlock> blocks;
  WnConv1x1 out1;  // skip -> skip
  WnConv1x1 out2;  // skip -> 1
  feat::AuxStats aux_stats;  // conditioning normalization, set by training

  std::vector<NamedTensor> params();
  size_t parameter_count() const;
};

struct DiscriminatorConfig {
  int layers = 10;
  int channels = 64;
  double leaky_alpha = 0.2;
  void validate() const;
};

struct DiscLayer {
  WnKernel3 conv;
  int dilation = 1;
};

struct DiscriminatorModel {
  DiscriminatorConfig cfg;
  std::vector<DiscLayer> layers;  // dilation 2^i at layer i
  WnConv1x1 out;                  // channels -> 1
  std::vector<NamedTensor> params();
  size_t parameter_count() const;
};

// Deterministic init: v ~ U[-s, s] with s = 1/sqrt(fan_in), gains set to the
// row norms (so effective weights equal v at init), biases zero.
GeneratorModel build_generator(const GeneratorConfig& cfg, std::uint64_t seed);
DiscriminatorModel build_discriminator(const DiscriminatorConfig& cfg, std::uint64_t seed);

// ---- forward passes ----
// dilation_factors: per-sample E_t, required (length T) when the model has
// adaptive blocks, ignored otherwise. Graph and eager paths share the same
// kernels and op order, so they produce bit-identical outputs.

struct BoundParam {
  Tensor2* tensor;
  ad::Var var;
};

struct GenGraphOut {
  ad::Var wave;                // 1 x T
  std::vector<ad::Var> skips;  // per block, skip_channels x T
};

GenGraphOut generator_forward_graph(ad::Graph& g, GeneratorModel& m, ad::Var z, ad::Var aux,
                                    const std::vector<double>& dilation_factors,
                                    bool params_require_grad,
                                    std::vector<BoundParam>* bound = nullptr);

ad::Var discriminator_forward_graph(ad::Graph& g, DiscriminatorModel& m, ad::Var x,
                                    bool params_require_grad,
                                    std::vector<BoundParam>* bound = nullptr);

struct GenEagerOut {
  Tensor2 wave;
  std::vector<Tensor2> skips;  // filled when keep_skips
};

GenEagerOut generator_forward(const GeneratorModel& m, const Tensor2& z, const Tensor2& aux,
                              const std::vector<double>& dilation_factors,
                              bool keep_skips = false);

Tensor2 discriminator_forward(const DiscriminatorModel& m, const Tensor2& x);

// Output module applied to the skip sum restricted to blocks [from, to).
// The full range reproduces generator_forward bit-exactly.
Tensor2 cumulative_skip_output(const GeneratorModel& m, const Tensor2& z, const Tensor2& aux,
                               const std::vector<double>& dilation_factors, int from, int to);

// ---- receptive fields ----
// Closed form: sum over macroblocks of 2*cycles*(2^n - 1) (times E for
// adaptive macroblocks), plus one for the center tap.
double receptive_field_length(const GeneratorConfig& cfg, std::optional<double> dilation_factor);

// Span of input samples with nonzero d(output[probe_t])/d(z), measured by a
// backward pass through a randomly initialized model.
int empirical_receptive_field(const GeneratorModel& m, int probe_t,
                              const std::vector<double>& dilation_factors, int input_len);

// Clone with every adaptive block replaced by a fixed block whose dilation is
// base_dilation * dilation_multiplier. Parameters are shared values (copied).
GeneratorModel substitute_dcnn(const GeneratorModel& m, int dilation_multiplier = 1);

}  // namespace qpv::model
