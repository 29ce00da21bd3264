#pragma once

#include <stdexcept>
#include <string>

namespace elip {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor extents or container dimensions that do not agree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf produced by an operation, or a mathematically undefined input.
class NumericError : public Error {
 public:
  using Error::Error;
};

// File does not start with the expected magic or has a malformed header.
class FormatError : public Error {
 public:
  using Error::Error;
};

// File ended before the declared payload was read.
class TruncationError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Dataset contents violate a precondition (empty class, dangling reference, ...).
class DataError : public Error {
 public:
  using Error::Error;
};

}  // namespace elip
