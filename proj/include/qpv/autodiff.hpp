// Copyright 2026 qpvoc authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "qpv/kernels.hpp"
#include "qpv/signal.hpp"
#include "qpv/tensor.hpp"

namespace qpv::ad {

class Graph;

// Handle to one recorded value. Values are computed eagerly as the graph is
// built; gradients become available after Graph::backward.
struct Var {
  Graph* graph = nullptr;
  int id = -1;
  const Tensor2& value() const;
};

// The three 1x1 tap matrices of a non-causal three-tap convolution plus the
// single bias applied to the summed output.
struct ConvKernel {
  Tensor2 center;  // applied at t
  Tensor2 past;    // applied at t - d
  Tensor2 future;  // applied at t + d
  Tensor2 bias;    // out x 1
};

// Reverse-mode tape. One graph records one forward pass; backward may be
// called once, after which the graph is consumed and rejects further use.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var input(Tensor2 value, bool requires_grad = false);

  // Seed must be a scalar (1x1) produced by this graph.
  void backward(Var seed);

  const Tensor2& value(Var v) const;
  // Gradient of the last backward seed w.r.t. v; zeros if v was not reached.
  const Tensor2& grad(Var v);

  size_t num_nodes() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

  // --- node construction (used by the free functions below) ---
  enum class Op : std::uint8_t {
    input, conv1x1, dil_conv3, pitch_conv3, gated, leaky_relu, weight_norm,
    add, sub, mul, affine, square, log_floor, clamp_min, slice_channels,
    select, reduce_sum, reduce_mean, reduce_mean_abs, frobenius, div_scalar,
    stft_mag,
  };

  struct Node {
    Op op = Op::input;
    int in[5] = {-1, -1, -1, -1, -1};
    int num_in = 0;
    Tensor2 value;
    Tensor2 grad;
    bool needs = false;
    bool requires_grad = false;
    // op parameters / saved forward state
    int i0 = 0, i1 = 0;
    double a = 0.0, b = 0.0;
    std::vector<int32_t> plan;
    signal::STFTSetting stft;
    std::shared_ptr<signal::StftGrid> grid;
    Tensor2 saved0, saved1;
  };

  Node& node(int id) { return nodes_[id]; }
  const Node& node(int id) const { return nodes_[id]; }
  Var emplace(Node&& n);

 private:
  void ensure_grad(int id);
  std::vector<Node> nodes_;
  bool consumed_ = false;
};

// --- layer operations ---
Var conv1x1(Var x, Var w, Var b);
Var dilated_conv1d(Var x, Var wc, Var wp, Var wf, Var b, int dilation);
Var pitch_dilated_conv1d(Var x, Var wc, Var wp, Var wf, Var b, std::vector<int32_t> plan);
Var gated_activation(Var a, Var b);
Var leaky_relu(Var x, double alpha);
Var relu(Var x);
Var weight_norm(Var v, Var g);

// --- elementwise / structural ---
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var affine(Var x, double scale, double shift);  // scale * x + shift
Var square(Var x);
Var log_floored(Var x, double floor_value);  // log(max(x, floor))
Var clamp_min(Var x, double floor_value);
Var slice_channels(Var x, int c0, int c1);  // rows [c0, c1)
Var select(Var x, int channel, int t);      // 1x1 pick

// --- reductions to 1x1 ---
Var reduce_sum(Var x);
Var reduce_mean(Var x);
Var reduce_mean_abs(Var x);
Var frobenius_norm(Var x);
Var div_scalar(Var numerator, Var denominator);

// Magnitude spectrogram (bins x frames) of a 1xT signal, differentiable in
// the signal.
Var stft_magnitude(Var x, const signal::STFTSetting& s);

// Central finite-difference check. `build` maps parameter Vars (same order
// as `params`) to a scalar Var. Returns
//   max over parameter elements of |analytic - numeric| / max(1, |numeric|).
// Throws NumericError on non-finite outputs.
using ScalarBuildFn = std::function<Var(Graph&, const std::vector<Var>&)>;
double grad_check(const ScalarBuildFn& build, std::vector<Tensor2> params,
                  double eps = 1e-6);

}  // namespace qpv::ad
