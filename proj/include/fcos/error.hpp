#pragma once

#include <stdexcept>
#include <string>

namespace fcos {

// Contract violations: bad arguments, invalid configs. Maps to CLI exit code 1.
struct ValidationError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Filesystem failures. Maps to CLI exit code 2.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed input files. Messages name the offending record or line.
struct ParseError : IoError {
  using IoError::IoError;
};

}  // namespace fcos
