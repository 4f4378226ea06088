// Copyright 2026 qpvoc authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <stdexcept>
#include <string>

namespace qpv {

// Bad shapes, bad hyperparameters, inconsistent model/feature setups.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// API misuse: backward on a non-scalar, probe out of range, empty block range.
struct UsageError : std::runtime_error {
  explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed files. Message carries a byte offset where known.
struct ParseError : std::runtime_error {
  explicit ParseError(const std::string& msg) : std::runtime_error(msg) {}
};

// Filesystem failures (open/read/write).
struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite values where finite ones are required (gradient checks, losses).
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Metrics that have no defined value on the given input (e.g. no jointly
// voiced frames for a pitch RMSE).
struct UndefinedResultError : std::runtime_error {
  explicit UndefinedResultError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace qpv
