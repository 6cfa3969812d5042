#pragma once

#include <stdexcept>
#include <string>

namespace sstda {

/// Invalid configuration or argument (bad shapes, out-of-range knobs).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Non-finite values or an otherwise broken numerical state.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class DataErrorCode {
  kIo,
  kBadMagic,
  kBadVersion,
  kTruncated,
  kOverflow,
  kTrailingBytes,
  kUnknownLabel,
  kEmpty,
  kMismatch,
  kMissing,
  kMalformed,
};

const char* to_string(DataErrorCode code);

/// Malformed or inconsistent files on disk.
class DataError : public std::runtime_error {
 public:
  DataError(DataErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  DataErrorCode code() const noexcept { return code_; }

 private:
  DataErrorCode code_;
};

}  // namespace sstda
