// Copyright 2026 qpvoc authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cstdint>

#include "qpv/tensor.hpp"

namespace qpv::ad {

// Worker threads used by convolution forward passes. Results are
// bit-identical for any thread count: threads split output channels and
// never share accumulators. Backward passes stay single-threaded.
void set_num_threads(int n);
int num_threads();

namespace kern {

// y[o,t] = b[o] + sum_i w[o,i] * x[i,t]
void conv1x1_forward(Tensor2& y, const Tensor2& x, const Tensor2& w, const Tensor2& b);
void conv1x1_backward(const Tensor2& x, const Tensor2& w, const Tensor2& gy,
                      Tensor2* gx, Tensor2* gw, Tensor2* gb);

// Three-tap convolution around a per-sample offset. plan == nullptr means a
// constant offset `dilation`; otherwise the offset at t is plan[t]. Out of
// range neighbours read as zero. The two paths keep the exact same
// per-element expression so a constant plan is bit-identical to the
// constant-dilation path.
void conv3_forward(Tensor2& y, const Tensor2& x, const Tensor2& wc, const Tensor2& wp,
                   const Tensor2& wf, const Tensor2& b, int dilation, const int32_t* plan);
void conv3_backward(const Tensor2& x, const Tensor2& wc, const Tensor2& wp,
                    const Tensor2& wf, const Tensor2& gy, int dilation, const int32_t* plan,
                    Tensor2* gx, Tensor2* gwc, Tensor2* gwp, Tensor2* gwf, Tensor2* gb);

// w[r,:] = g[r] * v[r,:] / max(||v[r,:]||, 1e-12); norms receives the
// (floored) row norms for the backward pass.
void weight_norm_forward(Tensor2& w, const Tensor2& v, const Tensor2& g, Tensor2& norms);
void weight_norm_backward(const Tensor2& v, const Tensor2& g, const Tensor2& norms,
                          const Tensor2& gw, Tensor2* gv, Tensor2* gg);

// y = tanh(a) .* sigmoid(b); the activations are saved for backward.
void gated_forward(Tensor2& y, const Tensor2& a, const Tensor2& b,
                   Tensor2& tanh_a, Tensor2& sig_b);

void leaky_relu_forward(Tensor2& y, const Tensor2& x, double alpha);

}  // namespace kern
}  // namespace qpv::ad
