#pragma once

#include <stdexcept>
#include <string>

namespace mpls {

// Invalid argument errors use std::invalid_argument directly. The types below
// carry distinct process exit codes in the command-line tool.

/// Malformed or inconsistent configuration / manifest content.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A stage was requested before the checkpoints it depends on exist.
class DependencyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Training produced a non-finite loss or parameter.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace mpls
