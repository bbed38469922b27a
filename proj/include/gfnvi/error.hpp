#pragma once

#include <stdexcept>
#include <string>

namespace gfnvi {

enum class ErrorCode {
  TerminatingStateHasNoChildren,
  RootHasNoParents,
  NotAnEdge,
  NotTerminating,
  IndexOutOfRange,
  DimensionMismatch,
  NonFiniteGradient,
  NonFiniteLoss,
  NoTerminalSamplerAvailable,
  RequiresForwardSamples,
  RequiresBackwardSamples,
  BatchTooSmall,
  WrongParamMode,
  UnknownDensity,
  StateSpaceTooLarge,
  ConfigError,
  MissingColumn,
  IoError,
  InvalidArgument,
};

const char* errorCodeName(ErrorCode code);

/// Library-wide exception. Every failure path named in the public API throws
/// this type; `code()` identifies which one.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(errorCodeName(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline const char* errorCodeName(ErrorCode code) {
  switch (code) {
    case ErrorCode::TerminatingStateHasNoChildren: return "TerminatingStateHasNoChildren";
    case ErrorCode::RootHasNoParents: return "RootHasNoParents";
    case ErrorCode::NotAnEdge: return "NotAnEdge";
    case ErrorCode::NotTerminating: return "NotTerminating";
    case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::NonFiniteGradient: return "NonFiniteGradient";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::NoTerminalSamplerAvailable: return "NoTerminalSamplerAvailable";
    case ErrorCode::RequiresForwardSamples: return "RequiresForwardSamples";
    case ErrorCode::RequiresBackwardSamples: return "RequiresBackwardSamples";
    case ErrorCode::BatchTooSmall: return "BatchTooSmall";
    case ErrorCode::WrongParamMode: return "WrongParamMode";
    case ErrorCode::UnknownDensity: return "UnknownDensity";
    case ErrorCode::StateSpaceTooLarge: return "StateSpaceTooLarge";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::MissingColumn: return "MissingColumn";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

}  // namespace gfnvi
