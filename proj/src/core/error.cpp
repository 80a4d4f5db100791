#include "error.hpp"

#include <cstdio>

namespace kamqm {

const char* error_name(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::Ok: return "Ok";
    case ErrorCode::SingularBasis: return "SingularBasis";
    case ErrorCode::UnsupportedDimension: return "UnsupportedDimension";
    case ErrorCode::NonpositiveEnergy: return "NonpositiveEnergy";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::NonHermitian: return "NonHermitian";
    case ErrorCode::CutoffTooSmall: return "CutoffTooSmall";
    case ErrorCode::EigensolverFailure: return "EigensolverFailure";
    case ErrorCode::StepTooLarge: return "StepTooLarge";
    case ErrorCode::EmptyShell: return "EmptyShell";
    case ErrorCode::EnergyBelowSeparatrix: return "EnergyBelowSeparatrix";
    case ErrorCode::SmallDivisorBreakdown: return "SmallDivisorBreakdown";
    case ErrorCode::NoConvergence: return "NoConvergence";
    case ErrorCode::DegenerateJacobian: return "DegenerateJacobian";
    case ErrorCode::GridTooCoarse: return "GridTooCoarse";
    case ErrorCode::WindowUnresolved: return "WindowUnresolved";
    case ErrorCode::EmptyOverlap: return "EmptyOverlap";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::Internal: return "Internal";
  }
  return "Unknown";
}

std::string format_double(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", x);
  return buf;
}

}  // namespace kamqm
