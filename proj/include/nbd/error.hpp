#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace nbd {

// Every failure the library reports carries one of these codes. The CLI maps
// each code to its own process exit status.
enum class ErrorCode : int {
  DegenerateFrame = 10,
  ZeroLengthBone,
  NonNormalizableRotation,
  RateMismatch,
  InvalidSkeleton,
  InvalidSequence,
  TooShort = 20,
  AllChannelsRejected,
  NotPreprocessed,
  ShapeMismatch = 30,
  NonFiniteLoss,
  InvalidConfig,
  StreamExhausted = 40,
  InsufficientPairs = 50,
  MissingModel,
  FormatError = 60,
  VersionMismatch,
  MissingFile,
  ConfigParse,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::DegenerateFrame: return "DegenerateFrame";
    case ErrorCode::ZeroLengthBone: return "ZeroLengthBone";
    case ErrorCode::NonNormalizableRotation: return "NonNormalizableRotation";
    case ErrorCode::RateMismatch: return "RateMismatch";
    case ErrorCode::InvalidSkeleton: return "InvalidSkeleton";
    case ErrorCode::InvalidSequence: return "InvalidSequence";
    case ErrorCode::TooShort: return "TooShort";
    case ErrorCode::AllChannelsRejected: return "AllChannelsRejected";
    case ErrorCode::NotPreprocessed: return "NotPreprocessed";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::StreamExhausted: return "StreamExhausted";
    case ErrorCode::InsufficientPairs: return "InsufficientPairs";
    case ErrorCode::MissingModel: return "MissingModel";
    case ErrorCode::FormatError: return "FormatError";
    case ErrorCode::VersionMismatch: return "VersionMismatch";
    case ErrorCode::MissingFile: return "MissingFile";
    case ErrorCode::ConfigParse: return "ConfigParse";
  }
  return "Unknown";
}

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

}  // namespace nbd
