// Copyright 2026 qpvoc authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "qpv/rng.hpp"

#include <sstream>

#include "qpv/errors.hpp"

namespace qpv {

std::string Rng::serialize() const {
  std::ostringstream oss;
  oss << engine_;
  return oss.str();
}

void Rng::deserialize(const std::string& text) {
  std::istringstream iss(text);
  iss >> engine_;
  if (iss.fail()) throw ParseError("rng: cannot parse engine state");
}

}  // namespace qpv
