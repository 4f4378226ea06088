// Copyright 2026 qpvoc authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "qpv/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "qpv/errors.hpp"

namespace qpv::ad {

namespace {
Graph* require_same_graph(std::initializer_list<Var> vars) {
  Graph* g = nullptr;
  for (const Var& v : vars) {
    if (!v.graph || v.id < 0) throw UsageError("op on invalid Var");
    if (!g) g = v.graph;
    if (g != v.graph) throw UsageError("op mixes Vars from different graphs");
  }
  return g;
}
}  // namespace

const Tensor2& Var::value() const {
  if (!graph || id < 0) throw UsageError("value() on invalid Var");
  return graph->value(*this);
}

Var Graph::input(Tensor2 value, bool requires_grad) {
  Node n;
  n.op = Op::input;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  n.needs = requires_grad;
  return emplace(std::move(n));
}

Var Graph::emplace(Node&& n) {
  if (consumed_) throw UsageError("graph already consumed by backward");
  for (int k = 0; k < n.num_in; ++k)
    if (nodes_[n.in[k]].needs) n.needs = true;
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

const Tensor2& Graph::value(Var v) const { return nodes_.at(v.id).value; }

const Tensor2& Graph::grad(Var v) {
  Node& n = nodes_.at(v.id);
  if (n.grad.data.empty()) n.grad = Tensor2(n.value.channels, n.value.length);
  return n.grad;
}

void Graph::ensure_grad(int id) {
  Node& n = nodes_[id];
  if (n.grad.data.empty()) n.grad = Tensor2(n.value.channels, n.value.length);
}

void Graph::backward(Var seed) {
  if (consumed_) throw UsageError("backward: graph already consumed");
  if (seed.graph != this || seed.id < 0 || seed.id >= static_cast<int>(nodes_.size()))
    throw UsageError("backward: seed not from this graph");
  if (!nodes_[seed.id].value.is_scalar())
    throw UsageError("backward: seed must be a scalar (1x1) value");
  consumed_ = true;

  ensure_grad(seed.id);
  nodes_[seed.id].grad.data[0] = 1.0;

  for (int id = seed.id; id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.needs || n.grad.data.empty()) continue;
    const Tensor2& gy = n.grad;
    auto grad_if_needed = [&](int slot) -> Tensor2* {
      const int src = n.in[slot];
      if (src < 0 || !nodes_[src].needs) return nullptr;
      ensure_grad(src);
      return &nodes_[src].grad;
    };
    switch (n.op) {
      case Op::input:
        break;
      case Op::conv1x1: {
        const Tensor2& x = nodes_[n.in[0]].value;
        const Tensor2& w = nodes_[n.in[1]].value;
        kern::conv1x1_backward(x, w, gy, grad_if_needed(0), grad_if_needed(1),
                               grad_if_needed(2));
        break;
      }
      case Op::dil_conv3:
      case Op::pitch_conv3: {
        const Tensor2& x = nodes_[n.in[0]].value;
        const Tensor2& wc = nodes_[n.in[1]].value;
        const Tensor2& wp = nodes_[n.in[2]].value;
        const Tensor2& wf = nodes_[n.in[3]].value;
        const int32_t* plan = n.op == Op::pitch_conv3 ? n.plan.data() : nullptr;
        kern::conv3_backward(x, wc, wp, wf, gy, n.i0, plan, grad_if_needed(0),
                             grad_if_needed(1), grad_if_needed(2), grad_if_needed(3),
                             grad_if_needed(4));
        break;
      }
      case Op::gated: {
        Tensor2* ga = grad_if_needed(0);
        Tensor2* gb = grad_if_needed(1);
        const Tensor2& ta = n.saved0;
        const Tensor2& sb = n.saved1;
        for (size_t i = 0; i < gy.data.size(); ++i) {
          const double g = gy.data[i];
          if (ga) ga->data[i] += g * (1.0 - ta.data[i] * ta.data[i]) * sb.data[i];
          if (gb) gb->data[i] += g * ta.data[i] * sb.data[i] * (1.0 - sb.data[i]);
        }
        break;
      }
      case Op::leaky_relu: {
        if (Tensor2* gx = grad_if_needed(0)) {
          const Tensor2& x = nodes_[n.in[0]].value;
          for (size_t i = 0; i < gy.data.size(); ++i)
            gx->data[i] += (x.data[i] >= 0.0 ? 1.0 : n.a) * gy.data[i];
        }
        break;
      }
      case Op::weight_norm: {
        const Tensor2& v = nodes_[n.in[0]].value;
        const Tensor2& g = nodes_[n.in[1]].value;
        kern::weight_norm_backward(v, g, n.saved0, gy, grad_if_needed(0),
                                   grad_if_needed(1));
        break;
      }
      case Op::add: {
        if (Tensor2* ga = grad_if_needed(0))
          for (size_t i = 0; i < gy.data.size(); ++i) ga->data[i] += gy.data[i];
        if (Tensor2* gb = grad_if_needed(1))
          for (size_t i = 0; i < gy.data.size(); ++i) gb->data[i] += gy.data[i];
        break;
      }
      case Op::sub: {
        if (Tensor2* ga = grad_if_needed(0))
          for (size_t i = 0; i < gy.data.size(); ++i) ga->data[i] += gy.data[i];
        if (Tensor2* gb = grad_if_needed(1))
          for (size_t i = 0; i < gy.data.size(); ++i) gb->data[i] -= gy.data[i];
        break;
      }
      case Op::mul: {
        const Tensor2& a = nodes_[n.in[0]].value;
        const Tensor2& b = nodes_[n.in[1]].value;
        if (Tensor2* ga = grad_if_needed(0))
          for (size_t i = 0; i < gy.data.size(); ++i) ga->data[i] += b.data[i] * gy.data[i];
        if (Tensor2* gb = grad_if_needed(1))
          for (size_t i = 0; i < gy.data.size(); ++i) gb->data[i] += a.data[i] * gy.data[i];
        break;
      }
      case Op::affine: {
        if (Tensor2* gx = grad_if_needed(0))
          for (size_t i = 0; i < gy.data.size(); ++i) gx->data[i] += n.a * gy.data[i];
        break;
      }
      case Op::square: {
        if (Tensor2* gx = grad_if_needed(0)) {
          const Tensor2& x = nodes_[n.in[0]].value;
          for (size_t i = 0; i < gy.data.size(); ++i)
            gx->data[i] += 2.0 * x.data[i] * gy.data[i];
        }
        break;
      }
      case Op::log_floor: {
        if (Tensor2* gx = grad_if_needed(0)) {
          const Tensor2& x = nodes_[n.in[0]].value;
          for (size_t i = 0; i < gy.data.size(); ++i)
            if (x.data[i] > n.a) gx->data[i] += gy.data[i] / x.data[i];
        }
        break;
      }
      case Op::clamp_min: {
        if (Tensor2* gx = grad_if_needed(0)) {
          const Tensor2& x = nodes_[n.in[0]].value;
          for (size_t i = 0; i < gy.data.size(); ++i)
            if (x.data[i] > n.a) gx->data[i] += gy.data[i];
        }
        break;
      }
      case Op::slice_channels: {
        if (Tensor2* gx = grad_if_needed(0)) {
          const int len = n.value.length;
          for (int c = 0; c < n.value.channels; ++c) {
            double* dst = gx->row(n.i0 + c);
            const double* src = gy.row(c);
            for (int t = 0; t < len; ++t) dst[t] += src[t];
          }
        }
        break;
      }
      case Op::select: {
        if (Tensor2* gx = grad_if_needed(0)) gx->at(n.i0, n.i1) += gy.data[0];
        break;
      }
      case Op::reduce_sum: {
        if (Tensor2* gx = grad_if_needed(0)) {
          const double g = gy.data[0];
          for (double& v : gx->data) v += g;
        }
        break;
      }
      case Op::reduce_mean: {
        if (Tensor2* gx = grad_if_needed(0)) {
          const double g = gy.data[0] / static_cast<double>(gx->data.size());
          for (double& v : gx->data) v += g;
        }
        break;
      }
      case Op::reduce_mean_abs: {
        if (Tensor2* gx = grad_if_needed(0)) {
          const Tensor2& x = nodes_[n.in[0]].value;
          const double g = gy.data[0] / static_cast<double>(gx->data.size());
          for (size_t i = 0; i < x.data.size(); ++i) {
            if (x.data[i] > 0.0)
              gx->data[i] += g;
            else if (x.data[i] < 0.0)
              gx->data[i] -= g;
          }
        }
        break;
      }
      case Op::frobenius: {
        if (Tensor2* gx = grad_if_needed(0)) {
          const Tensor2& x = nodes_[n.in[0]].value;
          const double norm = n.value.data[0];
          if (norm > 0.0) {
            const double g = gy.data[0] / norm;
            for (size_t i = 0; i < x.data.size(); ++i) gx->data[i] += g * x.data[i];
          }
        }
        break;
      }
      case Op::div_scalar: {
        const double av = nodes_[n.in[0]].value.data[0];
        const double bv = nodes_[n.in[1]].value.data[0];
        if (Tensor2* ga = grad_if_needed(0)) ga->data[0] += gy.data[0] / bv;
        if (Tensor2* gb = grad_if_needed(1))
          gb->data[0] -= gy.data[0] * av / (bv * bv);
        break;
      }
      case Op::stft_mag: {
        if (Tensor2* gx = grad_if_needed(0)) {
          signal::stft_magnitude_backward(*n.grid, gy, n.stft, gx->row(0),
                                          gx->length);
        }
        break;
      }
    }
    // Release activation gradients early; parameter/leaf gradients stay.
    if (n.op != Op::input) {
      n.grad = Tensor2();
    }
  }
}

namespace {
Graph::Node make_node(Graph::Op op, std::initializer_list<Var> ins) {
  Graph::Node n;
  n.op = op;
  for (const Var& v : ins) n.in[n.num_in++] = v.id;
  return n;
}
}  // namespace

Var conv1x1(Var x, Var w, Var b) {
  Graph* g = require_same_graph({x, w, b});
  Graph::Node n = make_node(Graph::Op::conv1x1, {x, w, b});
  kern::conv1x1_forward(n.value, x.value(), w.value(), b.value());
  return g->emplace(std::move(n));
}

Var dilated_conv1d(Var x, Var wc, Var wp, Var wf, Var b, int dilation) {
  Graph* g = require_same_graph({x, wc, wp, wf, b});
  if (dilation < 1) throw ConfigError("dilated_conv1d: dilation must be >= 1");
  Graph::Node n = make_node(Graph::Op::dil_conv3, {x, wc, wp, wf, b});
  n.i0 = dilation;
  kern::conv3_forward(n.value, x.value(), wc.value(), wp.value(), wf.value(),
                      b.value(), dilation, nullptr);
  return g->emplace(std::move(n));
}

Var pitch_dilated_conv1d(Var x, Var wc, Var wp, Var wf, Var b,
                         std::vector<int32_t> plan) {
  Graph* g = require_same_graph({x, wc, wp, wf, b});
  if (static_cast<int>(plan.size()) != x.value().length)
    throw ConfigError("pitch_dilated_conv1d: plan length != input length");
  for (int32_t v : plan)
    if (v < 1) throw ConfigError("pitch_dilated_conv1d: plan entries must be >= 1");
  Graph::Node n = make_node(Graph::Op::pitch_conv3, {x, wc, wp, wf, b});
  n.plan = std::move(plan);
  kern::conv3_forward(n.value, x.value(), wc.value(), wp.value(), wf.value(),
                      b.value(), 0, n.plan.data());
  return g->emplace(std::move(n));
}

Var gated_activation(Var a, Var b) {
  Graph* g = require_same_graph({a, b});
  Graph::Node n = make_node(Graph::Op::gated, {a, b});
  kern::gated_forward(n.value, a.value(), b.value(), n.saved0, n.saved1);
  return g->emplace(std::move(n));
}

Var leaky_relu(Var x, double alpha) {
  Graph* g = require_same_graph({x});
  Graph::Node n = make_node(Graph::Op::leaky_relu, {x});
  n.a = alpha;
  kern::leaky_relu_forward(n.value, x.value(), alpha);
  return g->emplace(std::move(n));
}

Var relu(Var x) { return leaky_relu(x, 0.0); }

Var weight_norm(Var v, Var g_) {
  Graph* g = require_same_graph({v, g_});
  Graph::Node n = make_node(Graph::Op::weight_norm, {v, g_});
  kern::weight_norm_forward(n.value, v.value(), g_.value(), n.saved0);
  return g->emplace(std::move(n));
}

Var add(Var a, Var b) {
  Graph* g = require_same_graph({a, b});
  if (!a.value().same_shape(b.value())) throw ConfigError("add: shape mismatch");
  Graph::Node n = make_node(Graph::Op::add, {a, b});
  n.value = a.value();
  for (size_t i = 0; i < n.value.data.size(); ++i) n.value.data[i] += b.value().data[i];
  return g->emplace(std::move(n));
}

Var sub(Var a, Var b) {
  Graph* g = require_same_graph({a, b});
  if (!a.value().same_shape(b.value())) throw ConfigError("sub: shape mismatch");
  Graph::Node n = make_node(Graph::Op::sub, {a, b});
  n.value = a.value();
  for (size_t i = 0; i < n.value.data.size(); ++i) n.value.data[i] -= b.value().data[i];
  return g->emplace(std::move(n));
}

Var mul(Var a, Var b) {
  Graph* g = require_same_graph({a, b});
  if (!a.value().same_shape(b.value())) throw ConfigError("mul: shape mismatch");
  Graph::Node n = make_node(Graph::Op::mul, {a, b});
  n.value = a.value();
  for (size_t i = 0; i < n.value.data.size(); ++i) n.value.data[i] *= b.value().data[i];
  return g->emplace(std::move(n));
}

Var affine(Var x, double scale, double shift) {
  Graph* g = require_same_graph({x});
  Graph::Node n = make_node(Graph::Op::affine, {x});
  n.a = scale;
  n.b = shift;
  n.value = x.value();
  for (double& v : n.value.data) v = scale * v + shift;
  return g->emplace(std::move(n));
}

Var square(Var x) {
  Graph* g = require_same_graph({x});
  Graph::Node n = make_node(Graph::Op::square, {x});
  n.value = x.value();
  for (double& v : n.value.data) v *= v;
  return g->emplace(std::move(n));
}

Var log_floored(Var x, double floor_value) {
  Graph* g = require_same_graph({x});
  Graph::Node n = make_node(Graph::Op::log_floor, {x});
  n.a = floor_value;
  n.value = x.value();
  for (double& v : n.value.data) v = std::log(std::max(v, floor_value));
  return g->emplace(std::move(n));
}

Var clamp_min(Var x, double floor_value) {
  Graph* g = require_same_graph({x});
  Graph::Node n = make_node(Graph::Op::clamp_min, {x});
  n.a = floor_value;
  n.value = x.value();
  for (double& v : n.value.data) v = std::max(v, floor_value);
  return g->emplace(std::move(n));
}

Var slice_channels(Var x, int c0, int c1) {
  Graph* g = require_same_graph({x});
  const Tensor2& xv = x.value();
  if (c0 < 0 || c1 <= c0 || c1 > xv.channels)
    throw UsageError("slice_channels: bad channel range");
  Graph::Node n = make_node(Graph::Op::slice_channels, {x});
  n.i0 = c0;
  n.value = Tensor2(c1 - c0, xv.length);
  for (int c = c0; c < c1; ++c)
    std::copy(xv.row(c), xv.row(c) + xv.length, n.value.row(c - c0));
  return g->emplace(std::move(n));
}

Var select(Var x, int channel, int t) {
  Graph* g = require_same_graph({x});
  const Tensor2& xv = x.value();
  if (channel < 0 || channel >= xv.channels || t < 0 || t >= xv.length)
    throw UsageError("select: index out of range");
  Graph::Node n = make_node(Graph::Op::select, {x});
  n.i0 = channel;
  n.i1 = t;
  n.value = Tensor2(1, 1);
  n.value.data[0] = xv.at(channel, t);
  return g->emplace(std::move(n));
}

Var reduce_sum(Var x) {
  Graph* g = require_same_graph({x});
  Graph::Node n = make_node(Graph::Op::reduce_sum, {x});
  n.value = Tensor2(1, 1);
  double s = 0.0;
  for (double v : x.value().data) s += v;
  n.value.data[0] = s;
  return g->emplace(std::move(n));
}

Var reduce_mean(Var x) {
  Graph* g = require_same_graph({x});
  if (x.value().data.empty()) throw ConfigError("reduce_mean: empty input");
  Graph::Node n = make_node(Graph::Op::reduce_mean, {x});
  n.value = Tensor2(1, 1);
  double s = 0.0;
  for (double v : x.value().data) s += v;
  n.value.data[0] = s / static_cast<double>(x.value().data.size());
  return g->emplace(std::move(n));
}

Var reduce_mean_abs(Var x) {
  Graph* g = require_same_graph({x});
  if (x.value().data.empty()) throw ConfigError("reduce_mean_abs: empty input");
  Graph::Node n = make_node(Graph::Op::reduce_mean_abs, {x});
  n.value = Tensor2(1, 1);
  double s = 0.0;
  for (double v : x.value().data) s += std::abs(v);
  n.value.data[0] = s / static_cast<double>(x.value().data.size());
  return g->emplace(std::move(n));
}

Var frobenius_norm(Var x) {
  Graph* g = require_same_graph({x});
  Graph::Node n = make_node(Graph::Op::frobenius, {x});
  n.value = Tensor2(1, 1);
  double s = 0.0;
  for (double v : x.value().data) s += v * v;
  n.value.data[0] = std::sqrt(s);
  return g->emplace(std::move(n));
}

Var div_scalar(Var numerator, Var denominator) {
  Graph* g = require_same_graph({numerator, denominator});
  if (!numerator.value().is_scalar() || !denominator.value().is_scalar())
    throw UsageError("div_scalar: both operands must be 1x1");
  Graph::Node n = make_node(Graph::Op::div_scalar, {numerator, denominator});
  n.value = Tensor2(1, 1);
  n.value.data[0] = numerator.value().data[0] / denominator.value().data[0];
  return g->emplace(std::move(n));
}

Var stft_magnitude(Var x, const signal::STFTSetting& s) {
  Graph* g = require_same_graph({x});
  const Tensor2& xv = x.value();
  if (xv.channels != 1) throw ConfigError("stft_magnitude: expects a 1xT signal");
  Graph::Node n = make_node(Graph::Op::stft_mag, {x});
  n.stft = s;
  n.grid = std::make_shared<signal::StftGrid>(
      signal::stft_complex(xv.row(0), xv.length, s));
  n.value = Tensor2(n.grid->bins, n.grid->frames);
  for (size_t i = 0; i < n.value.data.size(); ++i)
    n.value.data[i] = std::hypot(n.grid->re[i], n.grid->im[i]);
  return g->emplace(std::move(n));
}

double grad_check(const ScalarBuildFn& build, std::vector<Tensor2> params, double eps) {
  std::vector<Tensor2> analytic;
  {
    Graph g;
    std::vector<Var> vars;
    vars.reserve(params.size());
    for (const Tensor2& p : params) vars.push_back(g.input(p, true));
    Var y = build(g, vars);
    if (!y.value().is_scalar())
      throw UsageError("grad_check: build must return a scalar");
    if (!std::isfinite(y.value().data[0]))
      throw NumericError("grad_check: non-finite output");
    g.backward(y);
    for (const Var& v : vars) analytic.push_back(g.grad(v));
  }
  auto eval = [&]() {
    Graph g;
    std::vector<Var> vars;
    vars.reserve(params.size());
    for (const Tensor2& p : params) vars.push_back(g.input(p, false));
    const double y = build(g, vars).value().data[0];
    if (!std::isfinite(y)) throw NumericError("grad_check: non-finite output");
    return y;
  };
  double max_rel = 0.0;
  for (size_t p = 0; p < params.size(); ++p) {
    for (size_t j = 0; j < params[p].data.size(); ++j) {
      const double orig = params[p].data[j];
      params[p].data[j] = orig + eps;
      const double yp = eval();
      params[p].data[j] = orig - eps;
      const double ym = eval();
      params[p].data[j] = orig;
      const double numeric = (yp - ym) / (2.0 * eps);
      const double rel = std::abs(analytic[p].data[j] - numeric) /
                         std::max(1.0, std::abs(numeric));
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

}  // namespace qpv::ad
