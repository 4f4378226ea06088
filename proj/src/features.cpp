// Copyright 2026 qpvoc authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "qpv/features.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "qpv/errors.hpp"
#include "qpv/rng.hpp"
#include "qpv/signal.hpp"

namespace qpv::feat {

namespace {
constexpr double kTwoPi = 6.283185307179586476925287;
}

void FeatureTrack::validate() const {
  const size_t n = f0.size();
  if (uv.size() != n || static_cast<size_t>(aux.length) != n)
    throw ConfigError("feature track: frame counts differ across tracks");
  if (hop < 1) throw ConfigError("feature track: hop must be >= 1");
  for (size_t i = 0; i < n; ++i) {
    if ((f0[i] > 0.0) != (uv[i] == 1))
      throw ConfigError("feature track: f0 > 0 must coincide with uv == 1");
  }
}

ContinuousF0 interpolate_continuous_f0(const std::vector<double>& f0) {
  ContinuousF0 out;
  const int n = static_cast<int>(f0.size());
  out.f0.assign(n, 0.0);
  out.uv.assign(n, 0);
  int first_voiced = -1, last_voiced = -1;
  for (int i = 0; i < n; ++i) {
    if (f0[i] > 0.0) {
      out.uv[i] = 1;
      if (first_voiced < 0) first_voiced = i;
      last_voiced = i;
    }
  }
  if (first_voiced < 0)
    throw ConfigError("continuous f0: all frames unvoiced, no anchor value");
  for (int i = 0; i <= first_voiced; ++i) out.f0[i] = f0[first_voiced];
  for (int i = last_voiced; i < n; ++i) out.f0[i] = f0[last_voiced];
  int prev = first_voiced;
  for (int i = first_voiced + 1; i <= last_voiced; ++i) {
    if (f0[i] <= 0.0) continue;
    out.f0[i] = f0[i];
    const int gap = i - prev;
    for (int k = prev + 1; k < i; ++k) {
      const double w = static_cast<double>(k - prev) / gap;
      out.f0[k] = f0[prev] + w * (f0[i] - f0[prev]);
    }
    prev = i;
  }
  return out;
}

FeatureTrack scale_f0(FeatureTrack track, double ratio) {
  if (ratio <= 0.0) throw ConfigError("scale_f0: ratio must be positive");
  for (double& v : track.f0) v *= ratio;  // unvoiced zeros stay zero
  return track;
}

std::vector<double> dilated_factors(const std::vector<double>& f0_per_sample,
                                    double sample_rate, double dense_factor) {
  if (dense_factor <= 0.0) throw ConfigError("dilated factors: dense factor must be > 0");
  std::vector<double> e(f0_per_sample.size());
  for (size_t t = 0; t < e.size(); ++t) {
    if (f0_per_sample[t] <= 0.0)
      throw UsageError("dilated factors: zero f0 sample; interpolate first");
    e[t] = sample_rate / (f0_per_sample[t] * dense_factor);
  }
  return e;
}

DilationPlan dilation_plan(const std::vector<double>& dilation_factors, int base_dilation) {
  if (base_dilation < 1) throw ConfigError("dilation plan: base dilation must be >= 1");
  DilationPlan plan;
  plan.base_dilation = base_dilation;
  plan.offsets.resize(dilation_factors.size());
  for (size_t t = 0; t < dilation_factors.size(); ++t) {
    const long long r = std::llround(dilation_factors[t] * base_dilation);
    plan.offsets[t] = static_cast<int32_t>(std::max(1LL, r));
  }
  return plan;
}

Tensor2 upsample_to_samples(const Tensor2& frame_matrix, int hop) {
  if (hop < 1) throw ConfigError("upsample: hop must be >= 1");
  Tensor2 out(frame_matrix.channels, frame_matrix.length * hop);
  for (int c = 0; c < frame_matrix.channels; ++c) {
    const double* src = frame_matrix.row(c);
    double* dst = out.row(c);
    for (int f = 0; f < frame_matrix.length; ++f)
      for (int k = 0; k < hop; ++k) dst[f * hop + k] = src[f];
  }
  return out;
}

std::vector<double> upsample_to_samples(const std::vector<double>& frame_values, int hop) {
  if (hop < 1) throw ConfigError("upsample: hop must be >= 1");
  std::vector<double> out(frame_values.size() * hop);
  for (size_t f = 0; f < frame_values.size(); ++f)
    for (int k = 0; k < hop; ++k) out[f * hop + k] = frame_values[f];
  return out;
}

Tensor2 band_energy_features(const Waveform& x, int hop, int frames) {
  const int frame_length = 512;
  signal::STFTSetting s;
  s.fft_size = 512;
  s.frame_length = frame_length;
  s.frame_shift = hop;
  s.window = signal::WindowKind::hann;
  // Pad so every hop-aligned frame is complete.
  std::vector<double> padded(x.samples);
  padded.resize(static_cast<size_t>(frames - 1) * hop + frame_length, 0.0);
  const Tensor2 mag = signal::stft_magnitude(padded.data(),
                                             static_cast<int>(padded.size()), s);
  // Octave-spaced band edges in Hz.
  double edges[kNumBands + 1];
  edges[0] = 50.0;
  for (int b = 1; b < kNumBands; ++b) edges[b] = edges[b - 1] * 2.0;
  edges[kNumBands] = x.sample_rate / 2.0;

  Tensor2 out(kNumBands, frames);
  const double bin_hz = static_cast<double>(x.sample_rate) / s.fft_size;
  for (int b = 0; b < kNumBands; ++b) {
    const int k0 = std::max(0, static_cast<int>(std::ceil(edges[b] / bin_hz)));
    const int k1 = std::min(mag.channels, static_cast<int>(std::ceil(edges[b + 1] / bin_hz)));
    for (int f = 0; f < frames; ++f) {
      double e = 0.0;
      for (int k = k0; k < k1; ++k) {
        const double m = mag.at(k, f);
        e += m * m;
      }
      out.at(b, f) = std::log(e + 1e-10);
    }
  }
  return out;
}

void CorpusRecipe::validate() const {
  if (num_utterances < 1) throw ConfigError("corpus recipe: empty recipe");
  if (frames_per_utterance < 4) throw ConfigError("corpus recipe: too few frames");
  if (hop < 1 || sample_rate < 1) throw ConfigError("corpus recipe: bad rates");
  if (f0_min <= 0.0 || f0_min > f0_max) throw ConfigError("corpus recipe: bad f0 range");
  if (lead_unvoiced_frames + tail_unvoiced_frames + gap_unvoiced_frames + 4 >
      frames_per_utterance)
    throw ConfigError("corpus recipe: unvoiced regions leave no voiced frames");
}

namespace {
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}
}  // namespace

Corpus synth_corpus(const CorpusRecipe& r, std::uint64_t seed) {
  r.validate();
  Corpus corpus;
  corpus.reserve(r.num_utterances);
  for (int u = 0; u < r.num_utterances; ++u) {
    Rng rng(mix_seed(seed, u));
    const int F = r.frames_per_utterance;
    const int T = F * r.hop;
    const double fs = r.sample_rate;
    const double span = r.num_utterances > 1
                            ? static_cast<double>(u) / (r.num_utterances - 1)
                            : 0.5;
    const double base = r.f0_min * std::pow(r.f0_max / r.f0_min, span);
    const double vib_phase = rng.uniform(0.0, kTwoPi);
    const double rolloff = rng.uniform(0.55, 0.85);

    // Frame-level voicing: unvoiced lead/tail and one mid gap.
    std::vector<uint8_t> voiced(F, 1);
    for (int f = 0; f < r.lead_unvoiced_frames && f < F; ++f) voiced[f] = 0;
    for (int f = F - r.tail_unvoiced_frames; f < F; ++f)
      if (f >= 0) voiced[f] = 0;
    if (r.gap_unvoiced_frames > 0) {
      const int g0 = F / 2 - r.gap_unvoiced_frames / 2;
      for (int f = g0; f < g0 + r.gap_unvoiced_frames && f < F; ++f)
        if (f >= 0) voiced[f] = 0;
    }

    // Frame-level contour on voiced frames.
    std::vector<double> f0_frame(F, 0.0);
    double max_f0 = r.f0_min;
    for (int f = 0; f < F; ++f) {
      const double sec = static_cast<double>(f) * r.hop / fs;
      double v = base;
      v *= 1.0 + r.vibrato_depth * std::sin(kTwoPi * r.vibrato_rate_hz * sec + vib_phase);
      v *= 1.0 + r.drift_depth * (static_cast<double>(f) / F - 0.5);
      if (voiced[f]) {
        f0_frame[f] = v;
        max_f0 = std::max(max_f0, v);
      }
    }
    // Continuous contour for phase accumulation.
    const ContinuousF0 cont = interpolate_continuous_f0(f0_frame);

    const int harmonics =
        std::max(1, std::min(r.max_harmonics,
                             static_cast<int>(0.45 * fs / max_f0)));
    std::vector<double> amps(harmonics);
    double amp_sum = 0.0;
    for (int h = 0; h < harmonics; ++h) {
      amps[h] = std::pow(rolloff, h);
      amp_sum += amps[h];
    }
    for (double& a : amps) a *= r.harmonic_peak / amp_sum;
    std::vector<double> phase(harmonics);
    for (double& p : phase) p = rng.uniform(0.0, kTwoPi);

    // Per-sample envelope with short ramps at voiced-segment edges.
    const int ramp = std::min(64, r.hop);
    std::vector<double> env(T, 0.0);
    for (int t = 0; t < T; ++t) env[t] = voiced[t / r.hop] ? 1.0 : 0.0;
    for (int t = 0; t < T; ++t) {
      if (env[t] == 1.0 && (t == 0 || env[t - 1] == 0.0)) {
        for (int k = 0; k < ramp && t + k < T && env[t + k] == 1.0; ++k)
          env[t + k] = static_cast<double>(k + 1) / ramp;
      }
    }
    for (int t = T - 1; t >= 0; --t) {
      if (env[t] > 0.0 && (t == T - 1 || env[t + 1] == 0.0)) {
        for (int k = 0; k < ramp && t - k >= 0 && env[t - k] > 0.0; ++k)
          env[t - k] = std::min(env[t - k], static_cast<double>(k + 1) / ramp);
      }
    }

    Waveform wave;
    wave.sample_rate = r.sample_rate;
    wave.samples.assign(T, 0.0);
    for (int t = 0; t < T; ++t) {
      const double f0_here = cont.f0[t / r.hop];
      double s = 0.0;
      for (int h = 0; h < harmonics; ++h) {
        phase[h] += kTwoPi * (h + 1) * f0_here / fs;
        if (phase[h] > kTwoPi) phase[h] -= kTwoPi * std::floor(phase[h] / kTwoPi);
        s += amps[h] * std::sin(phase[h]);
      }
      const double sigma = voiced[t / r.hop] ? r.noise_level_voiced : r.noise_level_unvoiced;
      wave.samples[t] = env[t] * s + sigma * rng.normal();
    }

    CorpusUtterance utt;
    utt.wave = std::move(wave);
    utt.track.hop = r.hop;
    utt.track.sample_rate = r.sample_rate;
    utt.track.f0 = f0_frame;
    utt.track.uv = voiced;
    utt.track.aux = band_energy_features(utt.wave, r.hop, F);
    utt.track.validate();
    corpus.push_back(std::move(utt));
  }
  return corpus;
}

Tensor2 frame_conditioning_matrix(const FeatureTrack& track, double f0_ratio) {
  track.validate();
  const FeatureTrack scaled = scale_f0(track, f0_ratio);
  const ContinuousF0 cont = interpolate_continuous_f0(scaled.f0);
  const int F = track.frames();
  Tensor2 m(kAuxChannels, F);
  for (int f = 0; f < F; ++f) {
    m.at(0, f) = cont.f0[f];
    m.at(1, f) = scaled.uv[f];
    for (int b = 0; b < kNumBands; ++b) m.at(2 + b, f) = track.aux.at(b, f);
  }
  return m;
}

AuxStats compute_aux_stats(const Corpus& corpus) {
  if (corpus.empty()) throw ConfigError("aux stats: empty corpus");
  AuxStats stats;
  stats.mean.assign(kAuxChannels, 0.0);
  stats.stdev.assign(kAuxChannels, 0.0);
  long long total = 0;
  for (const CorpusUtterance& utt : corpus) {
    const Tensor2 m = frame_conditioning_matrix(utt.track, 1.0);
    total += m.length;
    for (int c = 0; c < kAuxChannels; ++c)
      for (int f = 0; f < m.length; ++f) stats.mean[c] += m.at(c, f);
  }
  for (double& v : stats.mean) v /= static_cast<double>(total);
  for (const CorpusUtterance& utt : corpus) {
    const Tensor2 m = frame_conditioning_matrix(utt.track, 1.0);
    for (int c = 0; c < kAuxChannels; ++c)
      for (int f = 0; f < m.length; ++f) {
        const double d = m.at(c, f) - stats.mean[c];
        stats.stdev[c] += d * d;
      }
  }
  for (double& v : stats.stdev) v = std::max(std::sqrt(v / total), 1e-6);
  return stats;
}

Conditioning make_conditioning(const FeatureTrack& track, double f0_ratio,
                               double dense_factor, const AuxStats& stats) {
  if (stats.mean.size() != kAuxChannels || stats.stdev.size() != kAuxChannels)
    throw ConfigError("conditioning: stats channel count mismatch");
  Tensor2 frame = frame_conditioning_matrix(track, f0_ratio);
  Conditioning cond;
  cond.f0_per_sample = upsample_to_samples(
      std::vector<double>(frame.row(0), frame.row(0) + frame.length), track.hop);
  for (int c = 0; c < kAuxChannels; ++c) {
    double* row = frame.row(c);
    for (int f = 0; f < frame.length; ++f)
      row[f] = (row[f] - stats.mean[c]) / stats.stdev[c];
  }
  cond.aux_per_sample = upsample_to_samples(frame, track.hop);
  cond.dilation_factors =
      dilated_factors(cond.f0_per_sample, track.sample_rate, dense_factor);
  return cond;
}

// ---- feature files ----

namespace {
constexpr char kMagic[4] = {'Q', 'P', 'V', 'F'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ofstream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::ifstream& is, const char* what) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw ParseError(std::string("feature file: truncated while reading ") + what);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void put_f32(std::ofstream& os, const double* src, size_t n) {
  for (size_t i = 0; i < n; ++i) {
    const float f = static_cast<float>(src[i]);
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32(os, bits);
  }
}

void get_f32(std::ifstream& is, double* dst, size_t n, const char* what) {
  for (size_t i = 0; i < n; ++i) {
    const std::uint32_t bits = get_u32(is, what);
    float f;
    std::memcpy(&f, &bits, 4);
    dst[i] = f;
  }
}
}  // namespace

void write_feature_file(const std::string& path, const FeatureTrack& track) {
  track.validate();
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("feature file: cannot open for writing: " + path);
  os.write(kMagic, 4);
  put_u32(os, kVersion);
  put_u32(os, static_cast<std::uint32_t>(track.sample_rate));
  put_u32(os, static_cast<std::uint32_t>(track.hop));
  put_u32(os, static_cast<std::uint32_t>(track.frames()));
  put_u32(os, static_cast<std::uint32_t>(track.aux.channels));
  put_f32(os, track.f0.data(), track.f0.size());
  std::vector<double> uv(track.uv.begin(), track.uv.end());
  put_f32(os, uv.data(), uv.size());
  for (int c = 0; c < track.aux.channels; ++c) put_f32(os, track.aux.row(c), track.frames());
  if (!os) throw IoError("feature file: write failed: " + path);
}

FeatureTrack read_feature_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("feature file: cannot open: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw ParseError("feature file: bad magic at offset 0: " + path);
  const std::uint32_t version = get_u32(is, "version");
  if (version != kVersion)
    throw ParseError("feature file: unsupported version " + std::to_string(version));
  FeatureTrack track;
  track.sample_rate = static_cast<int>(get_u32(is, "sample_rate"));
  track.hop = static_cast<int>(get_u32(is, "hop"));
  const int frames = static_cast<int>(get_u32(is, "frames"));
  const int aux_ch = static_cast<int>(get_u32(is, "aux channels"));
  track.f0.resize(frames);
  get_f32(is, track.f0.data(), frames, "f0");
  std::vector<double> uv(frames);
  get_f32(is, uv.data(), frames, "uv");
  track.uv.resize(frames);
  for (int i = 0; i < frames; ++i) track.uv[i] = uv[i] != 0.0 ? 1 : 0;
  track.aux = Tensor2(aux_ch, frames);
  for (int c = 0; c < aux_ch; ++c) get_f32(is, track.aux.row(c), frames, "aux");
  track.validate();
  return track;
}

void write_feature_text(const std::string& path, const FeatureTrack& track) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("feature text: cannot open for writing: " + path);
  os << "# frame f0 uv aux[" << track.aux.channels << "]\n";
  for (int f = 0; f < track.frames(); ++f) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%d %.9g %d", f, track.f0[f], track.uv[f] ? 1 : 0);
    os << buf;
    for (int c = 0; c < track.aux.channels; ++c) {
      std::snprintf(buf, sizeof buf, " %.9g", track.aux.at(c, f));
      os << buf;
    }
    os << "\n";
  }
}

}  // namespace qpv::feat
