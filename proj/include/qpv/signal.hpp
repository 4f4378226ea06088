// Copyright 2026 qpvoc authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <complex>
#include <cstdint>
#include <vector>

#include "qpv/tensor.hpp"

namespace qpv::signal {

enum class WindowKind { hann, rectangular };

// One STFT analysis setting: frames of frame_length samples every
// frame_shift samples, windowed and zero-padded to fft_size.
struct STFTSetting {
  int fft_size = 1024;
  int frame_shift = 120;
  int frame_length = 600;
  WindowKind window = WindowKind::hann;

  int bins() const { return fft_size / 2 + 1; }
  void validate() const;
};

std::vector<double> make_window(WindowKind kind, int n);

// Unnormalized transform, in place. inverse=true applies e^{+2*pi*i*jk/N}
// (still without the 1/N factor). Power-of-two sizes use radix-2; anything
// else falls back to the direct O(N^2) sum.
void fft(std::vector<std::complex<double>>& a, bool inverse);

int stft_frame_count(int num_samples, const STFTSetting& s);

// One-sided complex STFT, bins x frames in channel-major layout.
struct StftGrid {
  int frames = 0;
  int bins = 0;
  std::vector<double> re;  // re[bin*frames + frame]
  std::vector<double> im;

  double& re_at(int b, int f) { return re[static_cast<size_t>(b) * frames + f]; }
  double& im_at(int b, int f) { return im[static_cast<size_t>(b) * frames + f]; }
  double re_at(int b, int f) const { return re[static_cast<size_t>(b) * frames + f]; }
  double im_at(int b, int f) const { return im[static_cast<size_t>(b) * frames + f]; }
};

StftGrid stft_complex(const double* x, int num_samples, const STFTSetting& s);

// Magnitude spectrogram as a (bins x frames) tensor. Values are >= 0; no
// floor is applied here (loss code clamps before taking logs).
Tensor2 stft_magnitude(const double* x, int num_samples, const STFTSetting& s);
Tensor2 stft_magnitude(const Waveform& x, const STFTSetting& s);

// Adjoint of the magnitude spectrogram: accumulates d(sum of grad_mag .* M)/dx
// into dx (length num_samples). grad_mag is (bins x frames).
void stft_magnitude_backward(const StftGrid& grid, const Tensor2& grad_mag,
                             const STFTSetting& s, double* dx, int num_samples);

// Frame-level pitch track from normalized autocorrelation peaks.
struct F0Track {
  std::vector<double> f0;       // Hz, 0 where unvoiced
  std::vector<uint8_t> voiced;  // 1 voiced / 0 unvoiced
  std::vector<double> peak;     // normalized autocorrelation peak per frame
};

struct F0EstimatorConfig {
  int frame_shift = 110;
  int frame_length = 1536;
  double f0_min = 35.0;
  double f0_max = 720.0;
  double voicing_threshold = 0.3;
};

F0Track estimate_f0_autocorr(const Waveform& x, const F0EstimatorConfig& cfg);

// Mean normalized-autocorrelation peak over voiced frames; 0 if none are
// voiced. A scalar proxy for how strongly periodic a signal is.
double harmonicity_score(const Waveform& x, const F0EstimatorConfig& cfg);

}  // namespace qpv::signal
