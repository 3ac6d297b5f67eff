#pragma once

#include <stdexcept>
#include <string>

namespace flowpose {

/// A file on disk does not match its declared format (bad magic, truncation,
/// malformed record).
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A configuration violates one of the documented constraints. The message
/// names the offending key or layer.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Training produced a non-finite loss.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace flowpose
