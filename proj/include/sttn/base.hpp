// Copyright (c) 2026 the sttn authors.
// Licensed under the Apache License, Version 2.0.

#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace sttn {

using Index = std::int64_t;
using Shape = std::vector<Index>;

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
/// Dimension / shape mismatches.
struct ShapeError : Error {
  using Error::Error;
};
/// Domain violations and degenerate inputs (empty mask, no visible keys, ...).
struct ValueError : Error {
  using Error::Error;
};
/// File and format problems.
struct IoError : Error {
  using Error::Error;
};
/// NaN/Inf detected where finite values are required.
struct NumericError : Error {
  using Error::Error;
};

inline Index shape_numel(const Shape& s) {
  Index n = 1;
  for (Index d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ValueError(msg);
}

inline void require_shape(bool cond, const std::string& msg) {
  if (!cond) throw ShapeError(msg);
}

}  // namespace sttn
