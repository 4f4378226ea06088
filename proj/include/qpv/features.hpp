// Copyright 2026 qpvoc authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "qpv/tensor.hpp"

namespace qpv::feat {

inline constexpr int kNumBands = 8;

// Frame-rate auxiliary features. f0 is 0 on unvoiced frames until
// interpolation; aux holds the log band-energy spectral proxy
// (kNumBands x frames).
struct FeatureTrack {
  std::vector<double> f0;
  std::vector<uint8_t> uv;
  Tensor2 aux;
  int hop = 110;
  int sample_rate = 22050;

  int frames() const { return static_cast<int>(f0.size()); }
  int num_samples() const { return frames() * hop; }
  void validate() const;
};

// Per-sample integer dilation offsets realized from the dilated factors.
struct DilationPlan {
  std::vector<int32_t> offsets;
  int base_dilation = 1;
  double dense_factor = 4.0;
};

struct ContinuousF0 {
  std::vector<double> f0;   // every entry > 0
  std::vector<uint8_t> uv;  // original voicing flags
};

// Linear interpolation in Hz through unvoiced gaps; leading/trailing
// unvoiced regions hold the nearest voiced value. Throws on all-unvoiced
// input (no anchor).
ContinuousF0 interpolate_continuous_f0(const std::vector<double>& f0);

FeatureTrack scale_f0(FeatureTrack track, double ratio);

// E_t = sample_rate / (f0_t * dense_factor); f0 must be continuous (all > 0).
std::vector<double> dilated_factors(const std::vector<double>& f0_per_sample,
                                    double sample_rate, double dense_factor);

// offsets[t] = max(1, round-half-away-from-zero(E_t * base_dilation))
DilationPlan dilation_plan(const std::vector<double>& dilation_factors, int base_dilation);

// Each frame column repeated hop times.
Tensor2 upsample_to_samples(const Tensor2& frame_matrix, int hop);
std::vector<double> upsample_to_samples(const std::vector<double>& frame_values, int hop);

// Log energies of octave-spaced bands, one column per frame, frames aligned
// to hop boundaries (the signal is zero-padded at the tail).
Tensor2 band_energy_features(const Waveform& x, int hop, int frames);

// ---- synthetic harmonic corpus ----

struct CorpusRecipe {
  int num_utterances = 8;
  int frames_per_utterance = 220;
  int hop = 110;
  int sample_rate = 22050;
  double f0_min = 80.0;
  double f0_max = 320.0;
  double vibrato_depth = 0.04;   // relative
  double vibrato_rate_hz = 3.0;
  double drift_depth = 0.05;     // relative, linear over the utterance
  int max_harmonics = 12;
  double harmonic_peak = 0.5;    // target peak amplitude of the harmonic part
  double noise_level_voiced = 0.004;
  double noise_level_unvoiced = 0.03;
  int lead_unvoiced_frames = 6;
  int tail_unvoiced_frames = 6;
  int gap_unvoiced_frames = 8;   // mid-utterance unvoiced gap; 0 disables

  void validate() const;
};

struct CorpusUtterance {
  Waveform wave;
  FeatureTrack track;
};

using Corpus = std::vector<CorpusUtterance>;

// Deterministic for a given (recipe, seed): harmonic-plus-noise signals with
// exact F0/UV labels and the band-energy proxy as aux.
Corpus synth_corpus(const CorpusRecipe& recipe, std::uint64_t seed);

// ---- conditioning assembly for the generator ----

// Channel layout: [0] continuous F0 in Hz (after ratio scaling), [1] U/V,
// [2..2+kNumBands) band energies.
inline constexpr int kAuxChannels = 2 + kNumBands;

Tensor2 frame_conditioning_matrix(const FeatureTrack& track, double f0_ratio);

struct AuxStats {
  std::vector<double> mean;  // per channel
  std::vector<double> stdev;
};

AuxStats compute_aux_stats(const Corpus& corpus);

struct Conditioning {
  Tensor2 aux_per_sample;                // kAuxChannels x T, normalized
  std::vector<double> f0_per_sample;     // continuous, scaled, Hz
  std::vector<double> dilation_factors;  // E_t per sample
};

Conditioning make_conditioning(const FeatureTrack& track, double f0_ratio,
                               double dense_factor, const AuxStats& stats);

// ---- feature files ----
// Binary: magic "QPVF", u32 version, u32 sample_rate, u32 hop, u32 frames,
// u32 aux channels, then f32 little-endian tracks (f0, uv, aux rows).
void write_feature_file(const std::string& path, const FeatureTrack& track);
FeatureTrack read_feature_file(const std::string& path);
// Equivalent text dump for debugging: one line per frame.
void write_feature_text(const std::string& path, const FeatureTrack& track);

}  // namespace qpv::feat
