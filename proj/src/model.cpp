// Copyright 2026 qpvoc authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "qpv/model.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "qpv/errors.hpp"
#include "qpv/rng.hpp"

namespace qpv::model {

std::string to_string(GenStructure s) {
  switch (s) {
    case GenStructure::single: return "single";
    case GenStructure::stacked_af: return "stacked_af";
    case GenStructure::stacked_fa: return "stacked_fa";
    case GenStructure::parallel: return "parallel";
  }
  return "?";
}

GenStructure structure_from_string(const std::string& s) {
  if (s == "single") return GenStructure::single;
  if (s == "stacked_af") return GenStructure::stacked_af;
  if (s == "stacked_fa") return GenStructure::stacked_fa;
  if (s == "parallel") return GenStructure::parallel;
  throw ConfigError("unknown generator structure: " + s);
}

void GeneratorConfig::validate() const {
  if (residual_channels < 1 || skip_channels < 1 || aux_channels < 1)
    throw ConfigError("generator config: channel counts must be >= 1");
  if (dense_factor <= 0.0) throw ConfigError("generator config: dense factor must be > 0");
  if (sample_rate < 1) throw ConfigError("generator config: bad sample rate");
  for (const MacroblockSpec& mb : macroblocks)
    if (mb.blocks_per_cycle < 1 || mb.cycles < 1)
      throw ConfigError("generator config: macroblock sizes must be >= 1");
  auto kind_of = [&](size_t i) { return macroblocks[i].kind; };
  switch (structure) {
    case GenStructure::single:
      if (macroblocks.size() != 1 || kind_of(0) != BlockKind::fixed)
        throw ConfigError("single structure needs exactly one fixed macroblock");
      break;
    case GenStructure::stacked_af:
      if (macroblocks.size() != 2 || kind_of(0) != BlockKind::adaptive ||
          kind_of(1) != BlockKind::fixed)
        throw ConfigError("stacked_af needs [adaptive, fixed] macroblocks");
      break;
    case GenStructure::stacked_fa:
      if (macroblocks.size() != 2 || kind_of(0) != BlockKind::fixed ||
          kind_of(1) != BlockKind::adaptive)
        throw ConfigError("stacked_fa needs [fixed, adaptive] macroblocks");
      break;
    case GenStructure::parallel: {
      if (macroblocks.size() != 2)
        throw ConfigError("parallel structure needs two macroblocks");
      const bool one_each =
          (kind_of(0) == BlockKind::adaptive) != (kind_of(1) == BlockKind::adaptive);
      if (!one_each)
        throw ConfigError("parallel structure needs one fixed and one adaptive macroblock");
      break;
    }
  }
}

int GeneratorConfig::total_blocks() const {
  int n = 0;
  for (const MacroblockSpec& mb : macroblocks) n += mb.block_count();
  return n;
}

bool GeneratorConfig::has_adaptive() const {
  for (const MacroblockSpec& mb : macroblocks)
    if (mb.kind == BlockKind::adaptive) return true;
  return false;
}

void DiscriminatorConfig::validate() const {
  if (layers < 1 || channels < 1) throw ConfigError("discriminator config: bad sizes");
  if (leaky_alpha < 0.0 || leaky_alpha >= 1.0)
    throw ConfigError("discriminator config: alpha must be in [0, 1)");
}

// ---- initialization ----

namespace {
Tensor2 uniform_matrix(Rng& rng, int out, int in, double scale) {
  Tensor2 t(out, in);
  for (double& v : t.data) v = rng.uniform(-scale, scale);
  return t;
}

Tensor2 row_norms(const Tensor2& v) {
  Tensor2 g(v.channels, 1);
  for (int r = 0; r < v.channels; ++r) {
    double ss = 0.0;
    const double* row = v.row(r);
    for (int k = 0; k < v.length; ++k) ss += row[k] * row[k];
    g.at(r, 0) = std::sqrt(ss);
  }
  return g;
}

WnConv1x1 init_conv1x1(Rng& rng, int out, int in) {
  WnConv1x1 c;
  c.v = uniform_matrix(rng, out, in, 1.0 / std::sqrt(static_cast<double>(in)));
  c.gain = row_norms(c.v);
  c.bias = Tensor2(out, 1);
  return c;
}

WnKernel3 init_kernel3(Rng& rng, int out, int in) {
  WnKernel3 k;
  const double scale = 1.0 / std::sqrt(3.0 * in);
  k.vc = uniform_matrix(rng, out, in, scale);
  k.gc = row_norms(k.vc);
  k.vp = uniform_matrix(rng, out, in, scale);
  k.gp = row_norms(k.vp);
  k.vf = uniform_matrix(rng, out, in, scale);
  k.gf = row_norms(k.vf);
  k.bias = Tensor2(out, 1);
  return k;
}
}  // namespace

GeneratorModel build_generator(const GeneratorConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  GeneratorModel m;
  m.cfg = cfg;
  Rng rng(seed);
  const int R = cfg.residual_channels;
  const int S = cfg.skip_channels;
  const int A = cfg.aux_channels;
  m.input_proj = init_conv1x1(rng, R, 1);
  for (size_t mi = 0; mi < cfg.macroblocks.size(); ++mi) {
    const MacroblockSpec& mb = cfg.macroblocks[mi];
    for (int cyc = 0; cyc < mb.cycles; ++cyc) {
      for (int j = 0; j < mb.blocks_per_cycle; ++j) {
        ResidualBlock blk;
        blk.kind = mb.kind;
        blk.base_dilation = 1 << j;
        blk.macro_index = static_cast<int>(mi);
        blk.conv = init_kernel3(rng, 2 * R, R);
        blk.aux = init_conv1x1(rng, 2 * R, A);
        blk.res = init_conv1x1(rng, R, R);
        blk.skip = init_conv1x1(rng, S, R);
        m.blocks.push_back(std::move(blk));
      }
    }
  }
  m.out1 = init_conv1x1(rng, S, S);
  m.out2 = init_conv1x1(rng, 1, S);
  m.aux_stats.mean.assign(A, 0.0);
  m.aux_stats.stdev.assign(A, 1.0);
  return m;
}

DiscriminatorModel build_discriminator(const DiscriminatorConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  DiscriminatorModel m;
  m.cfg = cfg;
  Rng rng(seed);
  for (int i = 0; i < cfg.layers; ++i) {
    DiscLayer layer;
    layer.dilation = 1 << i;
    const int in = i == 0 ? 1 : cfg.channels;
    layer.conv = init_kernel3(rng, cfg.channels, in);
    m.layers.push_back(std::move(layer));
  }
  m.out = init_conv1x1(rng, 1, cfg.channels);
  return m;
}

// ---- parameter registry ----

namespace {
void push_conv(std::vector<NamedTensor>& out, const std::string& base, WnConv1x1& c) {
  out.push_back({base + ".v", &c.v});
  out.push_back({base + ".g", &c.gain});
  out.push_back({base + ".b", &c.bias});
}

void push_kernel(std::vector<NamedTensor>& out, const std::string& base, WnKernel3& k) {
  out.push_back({base + ".vc", &k.vc});
  out.push_back({base + ".gc", &k.gc});
  out.push_back({base + ".vp", &k.vp});
  out.push_back({base + ".gp", &k.gp});
  out.push_back({base + ".vf", &k.vf});
  out.push_back({base + ".gf", &k.gf});
  out.push_back({base + ".b", &k.bias});
}

std::string block_name(size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "block%03zu", i);
  return buf;
}
}  // namespace

std::vector<NamedTensor> GeneratorModel::params() {
  std::vector<NamedTensor> out;
  push_conv(out, "in", input_proj);
  for (size_t i = 0; i < blocks.size(); ++i) {
    const std::string base = block_name(i);
    push_kernel(out, base + ".conv", blocks[i].conv);
    push_conv(out, base + ".aux", blocks[i].aux);
    push_conv(out, base + ".res", blocks[i].res);
    push_conv(out, base + ".skip", blocks[i].skip);
  }
  push_conv(out, "out1", out1);
  push_conv(out, "out2", out2);
  return out;
}

size_t GeneratorModel::parameter_count() const {
  size_t n = 0;
  auto add = [&n](const Tensor2& t) { n += t.size(); };
  auto add_conv = [&](const WnConv1x1& c) { add(c.v); add(c.gain); add(c.bias); };
  auto add_kernel = [&](const WnKernel3& k) {
    add(k.vc); add(k.gc); add(k.vp); add(k.gp); add(k.vf); add(k.gf); add(k.bias);
  };
  add_conv(input_proj);
  for (const ResidualBlock& blk : blocks) {
    add_kernel(blk.conv);
    add_conv(blk.aux);
    add_conv(blk.res);
    add_conv(blk.skip);
  }
  add_conv(out1);
  add_conv(out2);
  return n;
}

std::vector<NamedTensor> DiscriminatorModel::params() {
  std::vector<NamedTensor> out;
  for (size_t i = 0; i < layers.size(); ++i)
    push_kernel(out, "d." + block_name(i) + ".conv", layers[i].conv);
  push_conv(out, "d.out", out);
  return out;
}

size_t DiscriminatorModel::parameter_count() const {
  size_t n = 0;
  for (const DiscLayer& l : layers)
    n += l.conv.vc.size() + l.conv.gc.size() + l.conv.vp.size() + l.conv.gp.size() +
         l.conv.vf.size() + l.conv.gf.size() + l.conv.bias.size();
  n += out.v.size() + out.gain.size() + out.bias.size();
  return n;
}

// ---- shared forward implementation ----
// GraphExec records onto a tape; EagerExec runs the same kernels directly.
// Both follow the identical op order so outputs agree bit for bit.

namespace {

struct GraphExec {
  ad::Graph& g;
  bool require_grad;
  std::vector<BoundParam>* bound;
  using V = ad::Var;

  V param(Tensor2& t) {
    V v = g.input(t, require_grad);
    if (bound) bound->push_back({&t, v});
    return v;
  }
  V wn(V v, V gain) { return ad::weight_norm(v, gain); }
  V conv1x1(V x, V w, V b) { return ad::conv1x1(x, w, b); }
  V conv3(V x, V wc, V wp, V wf, V b, int d, const std::vector<int32_t>* plan) {
    if (plan) return ad::pitch_dilated_conv1d(x, wc, wp, wf, b, *plan);
    return ad::dilated_conv1d(x, wc, wp, wf, b, d);
  }
  V add(V a, V b) { return ad::add(a, b); }
  V gated_halves(V pre, int half) {
    return ad::gated_activation(ad::slice_channels(pre, 0, half),
                                ad::slice_channels(pre, half, 2 * half));
  }
  V relu(V x) { return ad::relu(x); }
  V leaky(V x, double alpha) { return ad::leaky_relu(x, alpha); }
};

struct EagerExec {
  using V = Tensor2;

  V param(const Tensor2& t) { return t; }
  V wn(const V& v, const V& gain) {
    V w, norms;
    ad::kern::weight_norm_forward(w, v, gain, norms);
    return w;
  }
  V conv1x1(const V& x, const V& w, const V& b) {
    V y;
    ad::kern::conv1x1_forward(y, x, w, b);
    return y;
  }
  V conv3(const V& x, const V& wc, const V& wp, const V& wf, const V& b, int d,
          const std::vector<int32_t>* plan) {
    V y;
    ad::kern::conv3_forward(y, x, wc, wp, wf, b, plan ? 0 : d,
                            plan ? plan->data() : nullptr);
    return y;
  }
  V add(const V& a, const V& b) {
    if (!a.same_shape(b)) throw ConfigError("add: shape mismatch");
    V y = a;
    for (size_t i = 0; i < y.data.size(); ++i) y.data[i] += b.data[i];
    return y;
  }
  V gated_halves(const V& pre, int half) {
    V a(half, pre.length), b(half, pre.length);
    for (int c = 0; c < half; ++c) {
      std::copy(pre.row(c), pre.row(c) + pre.length, a.row(c));
      std::copy(pre.row(half + c), pre.row(half + c) + pre.length, b.row(c));
    }
    V y, ta, sb;
    ad::kern::gated_forward(y, a, b, ta, sb);
    return y;
  }
  V relu(const V& x) {
    V y;
    ad::kern::leaky_relu_forward(y, x, 0.0);
    return y;
  }
  V leaky(const V& x, double alpha) {
    V y;
    ad::kern::leaky_relu_forward(y, x, alpha);
    return y;
  }
};

using PlanMap = std::map<int, std::vector<int32_t>>;

template <typename ModelT>
PlanMap build_plans(const ModelT& m, const std::vector<double>& E, int T) {
  PlanMap plans;
  if (!m.cfg.has_adaptive()) return plans;
  if (static_cast<int>(E.size()) != T)
    throw UsageError("generator forward: dilation factors must cover every sample");
  for (const ResidualBlock& blk : m.blocks) {
    if (blk.kind != BlockKind::adaptive) continue;
    if (!plans.count(blk.base_dilation))
      plans[blk.base_dilation] = feat::dilation_plan(E, blk.base_dilation).offsets;
  }
  return plans;
}

// Runs blocks [0, block_limit) and accumulates skip outputs of blocks in
// [skip_from, skip_limit). Returns the output-module result on that sum.
template <typename Exec, typename ModelT>
typename Exec::V forward_impl(Exec& ex, ModelT& m, typename Exec::V z, typename Exec::V aux,
                              const PlanMap& plans, int skip_from, int skip_limit,
                              std::vector<typename Exec::V>* skips_out) {
  using V = typename Exec::V;
  const int half = m.cfg.residual_channels;

  V in_w = ex.wn(ex.param(m.input_proj.v), ex.param(m.input_proj.gain));
  V stream = ex.conv1x1(z, in_w, ex.param(m.input_proj.bias));

  V cur = stream;
  int cur_macro = 0;
  V skip_total;
  bool have_total = false;
  for (int i = 0; i < skip_limit; ++i) {
    auto& blk = m.blocks[i];
    if (m.cfg.structure == GenStructure::parallel && blk.macro_index != cur_macro) {
      cur = stream;  // parallel branches share the projected input
      cur_macro = blk.macro_index;
    }
    V wc = ex.wn(ex.param(blk.conv.vc), ex.param(blk.conv.gc));
    V wp = ex.wn(ex.param(blk.conv.vp), ex.param(blk.conv.gp));
    V wf = ex.wn(ex.param(blk.conv.vf), ex.param(blk.conv.gf));
    const std::vector<int32_t>* plan =
        blk.kind == BlockKind::adaptive ? &plans.at(blk.base_dilation) : nullptr;
    V conv_out = ex.conv3(cur, wc, wp, wf, ex.param(blk.conv.bias), blk.base_dilation, plan);
    V aux_w = ex.wn(ex.param(blk.aux.v), ex.param(blk.aux.gain));
    V pre = ex.add(conv_out, ex.conv1x1(aux, aux_w, ex.param(blk.aux.bias)));
    V gate = ex.gated_halves(pre, half);
    V sk = ex.conv1x1(gate, ex.wn(ex.param(blk.skip.v), ex.param(blk.skip.gain)),
                      ex.param(blk.skip.bias));
    if (i >= skip_from) {
      if (!have_total) {
        skip_total = sk;
        have_total = true;
      } else {
        skip_total = ex.add(skip_total, sk);
      }
    }
    if (skips_out) skips_out->push_back(sk);
    V res = ex.conv1x1(gate, ex.wn(ex.param(blk.res.v), ex.param(blk.res.gain)),
                       ex.param(blk.res.bias));
    cur = ex.add(cur, res);
  }
  if (!have_total) throw UsageError("generator forward: empty skip range");

  V y = ex.conv1x1(ex.relu(skip_total), ex.wn(ex.param(m.out1.v), ex.param(m.out1.gain)),
                   ex.param(m.out1.bias));
  y = ex.conv1x1(ex.relu(y), ex.wn(ex.param(m.out2.v), ex.param(m.out2.gain)),
                 ex.param(m.out2.bias));
  return y;
}

template <typename ModelT>
void check_forward_inputs(const ModelT& m, int z_channels, int z_len, int aux_channels,
                          int aux_len) {
  if (z_channels != 1) throw UsageError("generator forward: noise must be 1xT");
  if (aux_channels != m.cfg.aux_channels)
    throw UsageError("generator forward: aux channel mismatch");
  if (aux_len != z_len)
    throw UsageError("generator forward: aux length must match noise length");
}

}  // namespace

GenGraphOut generator_forward_graph(ad::Graph& g, GeneratorModel& m, ad::Var z, ad::Var aux,
                                    const std::vector<double>& dilation_factors,
                                    bool params_require_grad,
                                    std::vector<BoundParam>* bound) {
  check_forward_inputs(m, z.value().channels, z.value().length, aux.value().channels,
                       aux.value().length);
  const PlanMap plans = build_plans(m, dilation_factors, z.value().length);
  GraphExec ex{g, params_require_grad, bound};
  GenGraphOut out;
  out.wave = forward_impl(ex, m, z, aux, plans, 0, static_cast<int>(m.blocks.size()),
                          &out.skips);
  return out;
}

GenEagerOut generator_forward(const GeneratorModel& m, const Tensor2& z, const Tensor2& aux,
                              const std::vector<double>& dilation_factors, bool keep_skips) {
  check_forward_inputs(m, z.channels, z.length, aux.channels, aux.length);
  const PlanMap plans = build_plans(m, dilation_factors, z.length);
  EagerExec ex;
  GenEagerOut out;
  out.wave = forward_impl(ex, m, z, aux, plans, 0, static_cast<int>(m.blocks.size()),
                          keep_skips ? &out.skips : nullptr);
  return out;
}

Tensor2 cumulative_skip_output(const GeneratorModel& m, const Tensor2& z, const Tensor2& aux,
                               const std::vector<double>& dilation_factors, int from, int to) {
  if (from < 0 || to <= from || to > static_cast<int>(m.blocks.size()))
    throw UsageError("cumulative skip output: empty or out-of-range block range");
  check_forward_inputs(m, z.channels, z.length, aux.channels, aux.length);
  const PlanMap plans = build_plans(m, dilation_factors, z.length);
  EagerExec ex;
  return forward_impl(ex, m, z, aux, plans, from, to, nullptr);
}

ad::Var discriminator_forward_graph(ad::Graph& g, DiscriminatorModel& m, ad::Var x,
                                    bool params_require_grad,
                                    std::vector<BoundParam>* bound) {
  if (x.value().channels != 1 || x.value().length < 1)
    throw UsageError("discriminator forward: expects a nonempty 1xT signal");
  GraphExec ex{g, params_require_grad, bound};
  ad::Var cur = x;
  for (DiscLayer& layer : m.layers) {
    ad::Var wc = ex.wn(ex.param(layer.conv.vc), ex.param(layer.conv.gc));
    ad::Var wp = ex.wn(ex.param(layer.conv.vp), ex.param(layer.conv.gp));
    ad::Var wf = ex.wn(ex.param(layer.conv.vf), ex.param(layer.conv.gf));
    cur = ex.conv3(cur, wc, wp, wf, ex.param(layer.conv.bias), layer.dilation, nullptr);
    cur = ex.leaky(cur, m.cfg.leaky_alpha);
  }
  return ex.conv1x1(cur, ex.wn(ex.param(m.out.v), ex.param(m.out.gain)), ex.param(m.out.bias));
}

Tensor2 discriminator_forward(const DiscriminatorModel& m, const Tensor2& x) {
  if (x.channels != 1 || x.length < 1)
    throw UsageError("discriminator forward: expects a nonempty 1xT signal");
  EagerExec ex;
  Tensor2 cur = x;
  for (const DiscLayer& layer : m.layers) {
    Tensor2 wc = ex.wn(layer.conv.vc, layer.conv.gc);
    Tensor2 wp = ex.wn(layer.conv.vp, layer.conv.gp);
    Tensor2 wf = ex.wn(layer.conv.vf, layer.conv.gf);
    cur = ex.conv3(cur, wc, wp, wf, layer.conv.bias, layer.dilation, nullptr);
    cur = ex.leaky(cur, m.cfg.leaky_alpha);
  }
  return ex.conv1x1(cur, ex.wn(m.out.v, m.out.gain), m.out.bias);
}

// ---- receptive fields ----

double receptive_field_length(const GeneratorConfig& cfg,
                              std::optional<double> dilation_factor) {
  cfg.validate();
  double total = 1.0;  // the center tap, counted once
  for (const MacroblockSpec& mb : cfg.macroblocks) {
    double span = 2.0 * mb.cycles * (std::pow(2.0, mb.blocks_per_cycle) - 1.0);
    if (mb.kind == BlockKind::adaptive) {
      if (!dilation_factor)
        throw UsageError("receptive field: adaptive macroblocks need a dilation factor");
      span *= *dilation_factor;
    }
    total += span;
  }
  return total;
}

int empirical_receptive_field(const GeneratorModel& m, int probe_t,
                              const std::vector<double>& dilation_factors, int input_len) {
  if (probe_t < 0 || probe_t >= input_len)
    throw UsageError("empirical receptive field: probe out of range");
  Rng rng(0x5eedu);
  Tensor2 z(1, input_len);
  for (double& v : z.data) v = rng.normal();
  Tensor2 aux(m.cfg.aux_channels, input_len);
  for (double& v : aux.data) v = 0.25 * rng.normal();

  ad::Graph g;
  ad::Var zv = g.input(z, true);
  ad::Var av = g.input(aux, false);
  GeneratorModel& mm = const_cast<GeneratorModel&>(m);  // params bound read-only
  GenGraphOut out = generator_forward_graph(g, mm, zv, av, dilation_factors, false);
  ad::Var probe = ad::select(out.wave, 0, probe_t);
  g.backward(probe);
  const Tensor2& gz = g.grad(zv);
  int first = -1, last = -1;
  for (int t = 0; t < input_len; ++t) {
    if (gz.at(0, t) != 0.0) {
      if (first < 0) first = t;
      last = t;
    }
  }
  return first < 0 ? 0 : last - first + 1;
}

GeneratorModel substitute_dcnn(const GeneratorModel& m, int dilation_multiplier) {
  if (dilation_multiplier < 1)
    throw ConfigError("substitute_dcnn: multiplier must be >= 1");
  GeneratorModel out = m;
  for (size_t i = 0; i < out.blocks.size(); ++i) {
    if (out.blocks[i].kind == BlockKind::adaptive) {
      out.blocks[i].kind = BlockKind::fixed;
      out.blocks[i].base_dilation *= dilation_multiplier;
    }
  }
  // The config no longer matches an adaptive structure; treat as plain fixed
  // stacks for validation purposes.
  for (MacroblockSpec& mb : out.cfg.macroblocks) mb.kind = BlockKind::fixed;
  out.cfg.structure = m.cfg.structure == GenStructure::parallel ? GenStructure::parallel
                                                                : GenStructure::single;
  return out;
}

}  // namespace qpv::model
