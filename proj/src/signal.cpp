// Copyright 2026 qpvoc authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "qpv/signal.hpp"

#include <algorithm>
#include <cmath>

#include "qpv/errors.hpp"

namespace qpv::signal {

namespace {
constexpr double kTwoPi = 6.283185307179586476925287;

bool is_pow2(int n) { return n > 0 && (n & (n - 1)) == 0; }

void dft_direct(std::vector<std::complex<double>>& a, bool inverse) {
  const int n = static_cast<int>(a.size());
  std::vector<std::complex<double>> out(n);
  const double sign = inverse ? 1.0 : -1.0;
  for (int k = 0; k < n; ++k) {
    std::complex<double> acc(0.0, 0.0);
    for (int j = 0; j < n; ++j) {
      const double ang = sign * kTwoPi * static_cast<double>(k) * j / n;
      acc += a[j] * std::complex<double>(std::cos(ang), std::sin(ang));
    }
    out[k] = acc;
  }
  a = std::move(out);
}
}  // namespace

void STFTSetting::validate() const {
  if (fft_size < 1 || frame_shift < 1 || frame_length < 1)
    throw ConfigError("stft: sizes must be positive");
  if (frame_length > fft_size)
    throw ConfigError("stft: frame_length exceeds fft_size");
}

std::vector<double> make_window(WindowKind kind, int n) {
  if (n < 1) throw ConfigError("window: n must be >= 1");
  std::vector<double> w(n, 1.0);
  if (kind == WindowKind::hann) {
    if (n == 1) return w;
    for (int i = 0; i < n; ++i)
      w[i] = 0.5 - 0.5 * std::cos(kTwoPi * i / (n - 1));
  }
  return w;
}

void fft(std::vector<std::complex<double>>& a, bool inverse) {
  const int n = static_cast<int>(a.size());
  if (n <= 1) return;
  if (!is_pow2(n)) {
    dft_direct(a, inverse);
    return;
  }
  // Bit-reversal permutation.
  for (int i = 1, j = 0; i < n; ++i) {
    int bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (int len = 2; len <= n; len <<= 1) {
    const double ang = (inverse ? 1.0 : -1.0) * kTwoPi / len;
    const std::complex<double> wlen(std::cos(ang), std::sin(ang));
    for (int i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (int j = 0; j < len / 2; ++j) {
        const std::complex<double> u = a[i + j];
        const std::complex<double> v = a[i + j + len / 2] * w;
        a[i + j] = u + v;
        a[i + j + len / 2] = u - v;
        w *= wlen;
      }
    }
  }
}

int stft_frame_count(int num_samples, const STFTSetting& s) {
  s.validate();
  if (num_samples < s.frame_length)
    throw ConfigError("stft: signal shorter than one frame");
  return (num_samples - s.frame_length) / s.frame_shift + 1;
}

StftGrid stft_complex(const double* x, int num_samples, const STFTSetting& s) {
  const int frames = stft_frame_count(num_samples, s);
  const std::vector<double> win = make_window(s.window, s.frame_length);
  StftGrid g;
  g.frames = frames;
  g.bins = s.bins();
  g.re.assign(static_cast<size_t>(g.bins) * frames, 0.0);
  g.im.assign(static_cast<size_t>(g.bins) * frames, 0.0);
  std::vector<std::complex<double>> buf(s.fft_size);
  for (int f = 0; f < frames; ++f) {
    const double* seg = x + static_cast<size_t>(f) * s.frame_shift;
    for (int j = 0; j < s.frame_length; ++j)
      buf[j] = std::complex<double>(win[j] * seg[j], 0.0);
    std::fill(buf.begin() + s.frame_length, buf.end(), std::complex<double>(0.0, 0.0));
    fft(buf, false);
    for (int b = 0; b < g.bins; ++b) {
      g.re_at(b, f) = buf[b].real();
      g.im_at(b, f) = buf[b].imag();
    }
  }
  return g;
}

Tensor2 stft_magnitude(const double* x, int num_samples, const STFTSetting& s) {
  const StftGrid g = stft_complex(x, num_samples, s);
  Tensor2 m(g.bins, g.frames);
  for (size_t i = 0; i < m.data.size(); ++i)
    m.data[i] = std::hypot(g.re[i], g.im[i]);
  return m;
}

Tensor2 stft_magnitude(const Waveform& x, const STFTSetting& s) {
  return stft_magnitude(x.samples.data(), static_cast<int>(x.samples.size()), s);
}

void stft_magnitude_backward(const StftGrid& grid, const Tensor2& grad_mag,
                             const STFTSetting& s, double* dx, int num_samples) {
  if (grad_mag.channels != grid.bins || grad_mag.length != grid.frames)
    throw ConfigError("stft backward: gradient shape mismatch");
  const std::vector<double> win = make_window(s.window, s.frame_length);
  std::vector<std::complex<double>> buf(s.fft_size);
  for (int f = 0; f < grid.frames; ++f) {
    std::fill(buf.begin(), buf.end(), std::complex<double>(0.0, 0.0));
    for (int b = 0; b < grid.bins; ++b) {
      const double re = grid.re_at(b, f);
      const double im = grid.im_at(b, f);
      const double mag = std::hypot(re, im);
      if (mag <= 0.0) continue;  // magnitude not differentiable at 0; subgradient 0
      const double gm = grad_mag.at(b, f) / mag;
      buf[b] = std::complex<double>(gm * re, gm * im);
    }
    fft(buf, true);
    double* dseg = dx + static_cast<size_t>(f) * s.frame_shift;
    const int limit = std::min(s.frame_length,
                               num_samples - f * s.frame_shift);
    for (int j = 0; j < limit; ++j) dseg[j] += win[j] * buf[j].real();
  }
}

F0Track estimate_f0_autocorr(const Waveform& x, const F0EstimatorConfig& cfg) {
  if (cfg.f0_min <= 0.0 || cfg.f0_min >= cfg.f0_max)
    throw ConfigError("f0 estimator: need 0 < f0_min < f0_max");
  if (cfg.frame_shift < 1 || cfg.frame_length < 2)
    throw ConfigError("f0 estimator: bad frame setup");
  const double fs = x.sample_rate;
  const int lag_min = std::max(1, static_cast<int>(std::ceil(fs / cfg.f0_max)));
  const int lag_max_cfg = static_cast<int>(std::floor(fs / cfg.f0_min));
  F0Track track;
  const int len = static_cast<int>(x.samples.size());
  if (len < cfg.frame_length) return track;
  const int frames = (len - cfg.frame_length) / cfg.frame_shift + 1;
  const int L = cfg.frame_length;
  const int lag_max = std::min(lag_max_cfg, L - 1);
  if (lag_min > lag_max)
    throw ConfigError("f0 estimator: degenerate lag range for this frame length");

  track.f0.assign(frames, 0.0);
  track.voiced.assign(frames, 0);
  track.peak.assign(frames, 0.0);
  std::vector<double> sq_prefix(L + 1);
  for (int f = 0; f < frames; ++f) {
    const double* seg = x.samples.data() + static_cast<size_t>(f) * cfg.frame_shift;
    sq_prefix[0] = 0.0;
    for (int n = 0; n < L; ++n) sq_prefix[n + 1] = sq_prefix[n] + seg[n] * seg[n];
    double best = 0.0;
    int best_lag = 0;
    for (int lag = lag_min; lag <= lag_max; ++lag) {
      const int m = L - lag;
      double num = 0.0;
      for (int n = 0; n < m; ++n) num += seg[n] * seg[n + lag];
      const double e0 = sq_prefix[m];
      const double e1 = sq_prefix[L] - sq_prefix[lag];
      const double denom = std::sqrt(e0 * e1);
      const double r = denom > 0.0 ? num / denom : 0.0;
      if (r > best) {
        best = r;
        best_lag = lag;
      }
    }
    track.peak[f] = best;
    if (best_lag > 0 && best >= cfg.voicing_threshold) {
      track.voiced[f] = 1;
      track.f0[f] = fs / best_lag;
    }
  }
  return track;
}

double harmonicity_score(const Waveform& x, const F0EstimatorConfig& cfg) {
  const F0Track t = estimate_f0_autocorr(x, cfg);
  double sum = 0.0;
  int count = 0;
  for (size_t f = 0; f < t.voiced.size(); ++f) {
    if (t.voiced[f]) {
      sum += t.peak[f];
      ++count;
    }
  }
  return count > 0 ? sum / count : 0.0;
}

}  // namespace qpv::signal
