#pragma once

#include <stdexcept>
#include <string>

namespace kamqm {

// Numeric values are part of the C ABI (see include/kamqm.h); append only.
enum class ErrorCode : int {
  Ok = 0,
  SingularBasis = 1,
  UnsupportedDimension = 2,
  NonpositiveEnergy = 3,
  InvalidArgument = 4,
  ParseError = 5,
  NonHermitian = 6,
  CutoffTooSmall = 7,
  EigensolverFailure = 8,
  StepTooLarge = 9,
  EmptyShell = 10,
  EnergyBelowSeparatrix = 11,
  SmallDivisorBreakdown = 12,
  NoConvergence = 13,
  DegenerateJacobian = 14,
  GridTooCoarse = 15,
  WindowUnresolved = 16,
  EmptyOverlap = 17,
  IoError = 18,
  ConfigError = 19,
  Internal = 20,
};

const char* error_name(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_name(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// Shortest round-trip rendering of a double for messages.
std::string format_double(double x);

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace kamqm
