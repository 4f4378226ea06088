// Copyright 2026 qpvoc authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "qpv/kernels.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <thread>
#include <vector>

#include "qpv/errors.hpp"

namespace qpv::ad {

namespace {
std::atomic<int> g_threads{1};

// Run fn(o) for o in [0, out) split across worker threads. Each o writes
// only its own output row, so any split is deterministic.
template <typename Fn>
void parallel_rows(int out, long long work_per_row, const Fn& fn) {
  const int nt = std::min(g_threads.load(), out);
  if (nt <= 1 || work_per_row * out < 1 << 18) {
    for (int o = 0; o < out; ++o) fn(o);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(nt);
  for (int w = 0; w < nt; ++w) {
    pool.emplace_back([&, w]() {
      for (int o = w; o < out; o += nt) fn(o);
    });
  }
  for (auto& th : pool) th.join();
}
}  // namespace

void set_num_threads(int n) { g_threads.store(std::max(1, n)); }
int num_threads() { return g_threads.load(); }

namespace kern {

namespace {
void check_conv_shapes(const Tensor2& x, const Tensor2& w, const Tensor2& b,
                       const char* what) {
  if (w.length != x.channels)
    throw ConfigError(std::string(what) + ": weight columns != input channels");
  if (b.channels != w.channels || b.length != 1)
    throw ConfigError(std::string(what) + ": bias shape mismatch");
}
}  // namespace

void conv1x1_forward(Tensor2& y, const Tensor2& x, const Tensor2& w, const Tensor2& b) {
  check_conv_shapes(x, w, b, "conv1x1");
  const int out = w.channels, in = x.channels, T = x.length;
  y = Tensor2(out, T);
  parallel_rows(out, static_cast<long long>(in) * T, [&](int o) {
    double* yr = y.row(o);
    const double bv = b.at(o, 0);
    for (int t = 0; t < T; ++t) yr[t] = bv;
    for (int i = 0; i < in; ++i) {
      const double wv = w.at(o, i);
      const double* xr = x.row(i);
      for (int t = 0; t < T; ++t) yr[t] += wv * xr[t];
    }
  });
}

void conv1x1_backward(const Tensor2& x, const Tensor2& w, const Tensor2& gy,
                      Tensor2* gx, Tensor2* gw, Tensor2* gb) {
  const int out = w.channels, in = x.channels, T = x.length;
  for (int o = 0; o < out; ++o) {
    const double* gyr = gy.row(o);
    if (gb) {
      double s = 0.0;
      for (int t = 0; t < T; ++t) s += gyr[t];
      gb->at(o, 0) += s;
    }
    for (int i = 0; i < in; ++i) {
      const double* xr = x.row(i);
      if (gw) {
        double s = 0.0;
        for (int t = 0; t < T; ++t) s += gyr[t] * xr[t];
        gw->at(o, i) += s;
      }
      if (gx) {
        const double wv = w.at(o, i);
        double* gxr = gx->row(i);
        for (int t = 0; t < T; ++t) gxr[t] += wv * gyr[t];
      }
    }
  }
}

void conv3_forward(Tensor2& y, const Tensor2& x, const Tensor2& wc, const Tensor2& wp,
                   const Tensor2& wf, const Tensor2& b, int dilation, const int32_t* plan) {
  check_conv_shapes(x, wc, b, "conv3");
  if (!wc.same_shape(wp) || !wc.same_shape(wf))
    throw ConfigError("conv3: tap matrices must share one shape");
  if (!plan && dilation < 1) throw ConfigError("conv3: dilation must be >= 1");
  const int out = wc.channels, in = x.channels, T = x.length;
  y = Tensor2(out, T);
  parallel_rows(out, 3LL * in * T, [&](int o) {
    double* yr = y.row(o);
    const double bv = b.at(o, 0);
    for (int t = 0; t < T; ++t) yr[t] = bv;
    for (int i = 0; i < in; ++i) {
      const double a = wc.at(o, i);
      const double p = wp.at(o, i);
      const double f = wf.at(o, i);
      const double* xr = x.row(i);
      if (plan) {
        for (int t = 0; t < T; ++t) {
          const int dt = plan[t];
          const double xp = t - dt >= 0 ? xr[t - dt] : 0.0;
          const double xf = t + dt < T ? xr[t + dt] : 0.0;
          yr[t] += (a * xr[t] + p * xp) + f * xf;
        }
      } else {
        const int d = dilation;
        const int lo = std::min(d, T);
        const int hi = std::max(lo, T - d);
        for (int t = 0; t < lo; ++t) {
          const double xf = t + d < T ? xr[t + d] : 0.0;
          yr[t] += (a * xr[t] + p * 0.0) + f * xf;
        }
        for (int t = lo; t < hi; ++t)
          yr[t] += (a * xr[t] + p * xr[t - d]) + f * xr[t + d];
        for (int t = hi; t < T; ++t) {
          const double xp = t - d >= 0 ? xr[t - d] : 0.0;
          yr[t] += (a * xr[t] + p * xp) + f * 0.0;
        }
      }
    }
  });
}

void conv3_backward(const Tensor2& x, const Tensor2& wc, const Tensor2& wp,
                    const Tensor2& wf, const Tensor2& gy, int dilation, const int32_t* plan,
                    Tensor2* gx, Tensor2* gwc, Tensor2* gwp, Tensor2* gwf, Tensor2* gb) {
  const int out = wc.channels, in = x.channels, T = x.length;
  for (int o = 0; o < out; ++o) {
    const double* gyr = gy.row(o);
    if (gb) {
      double s = 0.0;
      for (int t = 0; t < T; ++t) s += gyr[t];
      gb->at(o, 0) += s;
    }
    for (int i = 0; i < in; ++i) {
      const double* xr = x.row(i);
      const double a = wc.at(o, i);
      const double p = wp.at(o, i);
      const double f = wf.at(o, i);
      double* gxr = gx ? gx->row(i) : nullptr;
      double sc = 0.0, sp = 0.0, sf = 0.0;
      for (int t = 0; t < T; ++t) {
        const int dt = plan ? plan[t] : dilation;
        const double gv = gyr[t];
        sc += gv * xr[t];
        if (t - dt >= 0) sp += gv * xr[t - dt];
        if (t + dt < T) sf += gv * xr[t + dt];
        if (gxr) {
          gxr[t] += a * gv;
          if (t - dt >= 0) gxr[t - dt] += p * gv;
          if (t + dt < T) gxr[t + dt] += f * gv;
        }
      }
      if (gwc) gwc->at(o, i) += sc;
      if (gwp) gwp->at(o, i) += sp;
      if (gwf) gwf->at(o, i) += sf;
    }
  }
}

void weight_norm_forward(Tensor2& w, const Tensor2& v, const Tensor2& g, Tensor2& norms) {
  if (g.channels != v.channels || g.length != 1)
    throw ConfigError("weight_norm: gain shape must be rows x 1");
  const int R = v.channels, K = v.length;
  w = Tensor2(R, K);
  norms = Tensor2(R, 1);
  for (int r = 0; r < R; ++r) {
    const double* vr = v.row(r);
    double ss = 0.0;
    for (int k = 0; k < K; ++k) ss += vr[k] * vr[k];
    const double n = std::max(std::sqrt(ss), 1e-12);
    norms.at(r, 0) = n;
    const double scale = g.at(r, 0) / n;
    double* wr = w.row(r);
    for (int k = 0; k < K; ++k) wr[k] = scale * vr[k];
  }
}

void weight_norm_backward(const Tensor2& v, const Tensor2& g, const Tensor2& norms,
                          const Tensor2& gw, Tensor2* gv, Tensor2* gg) {
  const int R = v.channels, K = v.length;
  for (int r = 0; r < R; ++r) {
    const double* vr = v.row(r);
    const double* gwr = gw.row(r);
    const double n = norms.at(r, 0);
    double s = 0.0;
    for (int k = 0; k < K; ++k) s += gwr[k] * vr[k];
    if (gg) gg->at(r, 0) += s / n;
    if (gv) {
      const double gn = g.at(r, 0) / n;
      const double corr = g.at(r, 0) * s / (n * n * n);
      double* gvr = gv->row(r);
      for (int k = 0; k < K; ++k) gvr[k] += gn * gwr[k] - corr * vr[k];
    }
  }
}

void gated_forward(Tensor2& y, const Tensor2& a, const Tensor2& b,
                   Tensor2& tanh_a, Tensor2& sig_b) {
  if (!a.same_shape(b)) throw ConfigError("gated_activation: shape mismatch");
  y = Tensor2(a.channels, a.length);
  tanh_a = Tensor2(a.channels, a.length);
  sig_b = Tensor2(a.channels, a.length);
  for (size_t i = 0; i < a.data.size(); ++i) {
    const double ta = std::tanh(a.data[i]);
    const double sb = 1.0 / (1.0 + std::exp(-b.data[i]));
    tanh_a.data[i] = ta;
    sig_b.data[i] = sb;
    y.data[i] = ta * sb;
  }
}

void leaky_relu_forward(Tensor2& y, const Tensor2& x, double alpha) {
  if (alpha < 0.0 || alpha > 1.0)
    throw ConfigError("leaky_relu: alpha must be in [0, 1]");
  y = Tensor2(x.channels, x.length);
  for (size_t i = 0; i < x.data.size(); ++i) {
    const double v = x.data[i];
    y.data[i] = v >= 0.0 ? v : alpha * v;
  }
}

}  // namespace kern
}  // namespace qpv::ad
