// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace dpa {

enum class ErrorCode {
  MalformedHeader,
  DimensionMismatch,
  NormViolation,
  LabelOutOfRange,
  InvalidBatchSize,
  ZeroMeanVector,
  IndexOutOfRange,
  UnfilledSlot,
  NonPositiveTemperature,
  DegenerateRunningMean,
  BetaOutOfRange,
  ShapeMismatch,
  NonFiniteGradient,
  DegenerateOutput,
  StepOutOfRange,
  InvalidConfig,
  NonFiniteLoss,
  LengthMismatch,
  EmptyInput,
  MissingLabels,
  InfeasibleSeparation,
  VersionMismatch,
  CorruptFile,
  IoError,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MalformedHeader: return "MalformedHeader";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::NormViolation: return "NormViolation";
    case ErrorCode::LabelOutOfRange: return "LabelOutOfRange";
    case ErrorCode::InvalidBatchSize: return "InvalidBatchSize";
    case ErrorCode::ZeroMeanVector: return "ZeroMeanVector";
    case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::UnfilledSlot: return "UnfilledSlot";
    case ErrorCode::NonPositiveTemperature: return "NonPositiveTemperature";
    case ErrorCode::DegenerateRunningMean: return "DegenerateRunningMean";
    case ErrorCode::BetaOutOfRange: return "BetaOutOfRange";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::NonFiniteGradient: return "NonFiniteGradient";
    case ErrorCode::DegenerateOutput: return "DegenerateOutput";
    case ErrorCode::StepOutOfRange: return "StepOutOfRange";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::MissingLabels: return "MissingLabels";
    case ErrorCode::InfeasibleSeparation: return "InfeasibleSeparation";
    case ErrorCode::VersionMismatch: return "VersionMismatch";
    case ErrorCode::CorruptFile: return "CorruptFile";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the codes above so
/// that front ends can map it onto an exit status.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) fail(code, what);
}

}  // namespace dpa
