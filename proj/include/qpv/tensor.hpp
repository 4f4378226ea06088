// Copyright 2026 qpvoc authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "qpv/errors.hpp"

namespace qpv {

// Dense 2-D array of doubles in channel-major layout: row c occupies
// data[c*length .. c*length+length). Holds activations, weight matrices
// (channels = fan-out rows) and per-channel vectors (length = 1).
struct Tensor2 {
  int channels = 0;
  int length = 0;
  std::vector<double> data;
  bool requires_grad = false;

  Tensor2() = default;
  Tensor2(int ch, int len, double fill = 0.0)
      : channels(ch), length(len), data(static_cast<size_t>(ch) * len, fill) {
    if (ch < 0 || len < 0) throw ConfigError("tensor: negative shape");
  }

  static Tensor2 from_rows(std::vector<std::vector<double>> rows) {
    Tensor2 t(static_cast<int>(rows.size()), rows.empty() ? 0 : static_cast<int>(rows[0].size()));
    for (int c = 0; c < t.channels; ++c) {
      if (static_cast<int>(rows[c].size()) != t.length)
        throw ConfigError("tensor: ragged rows");
      for (int i = 0; i < t.length; ++i) t.at(c, i) = rows[c][i];
    }
    return t;
  }

  double& at(int c, int t) { return data[static_cast<size_t>(c) * length + t]; }
  double at(int c, int t) const { return data[static_cast<size_t>(c) * length + t]; }
  double* row(int c) { return data.data() + static_cast<size_t>(c) * length; }
  const double* row(int c) const { return data.data() + static_cast<size_t>(c) * length; }

  size_t size() const { return data.size(); }
  bool same_shape(const Tensor2& o) const {
    return channels == o.channels && length == o.length;
  }
  bool is_scalar() const { return channels == 1 && length == 1; }
  double scalar() const {
    if (!is_scalar()) throw UsageError("tensor: scalar() on non-1x1 tensor");
    return data[0];
  }

  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }
};

// Mono audio at a known rate. Samples are nominally in [-1, 1] but nothing
// in the math requires that until WAV quantization.
struct Waveform {
  std::vector<double> samples;
  int sample_rate = 22050;
};

}  // namespace qpv
