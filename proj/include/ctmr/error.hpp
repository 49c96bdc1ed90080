#pragma once

#include <stdexcept>
#include <string>

namespace ctmr {

/// Invalid input, configuration or contract violation. CLI exit code 2.
class ValidationError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// File system or parse failure. CLI exit code 3.
class IoError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Non-finite values or other numerical breakdown. CLI exit code 3.
class NumericalError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Checkpoint written by an incompatible format version.
class VersionError : public IoError {
public:
  using IoError::IoError;
};

inline void require(bool cond, const std::string &what) {
  if (!cond) throw ValidationError(what);
}

} // namespace ctmr
