#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace tiersql {

enum class ErrorCode {
  kUsageMerge,
  kConfig,
  kPrecondition,
  kStrictMiss,
  kProvider,
  kDecode,
  kEmptySql,
  kRouting,
  kProtocol,
  kScoring,
  kEnvironment,
  kGoldError,
  kUndefinedMetric,
  kDegenerateGap,
  kDegenerateCost,
  kUndefinedBaseline,
  kLengthMismatch,
  kDataset,
  kIo,
};

constexpr std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kUsageMerge: return "usage-merge";
    case ErrorCode::kConfig: return "config";
    case ErrorCode::kPrecondition: return "precondition";
    case ErrorCode::kStrictMiss: return "strict-miss";
    case ErrorCode::kProvider: return "provider";
    case ErrorCode::kDecode: return "decode";
    case ErrorCode::kEmptySql: return "empty-sql";
    case ErrorCode::kRouting: return "routing";
    case ErrorCode::kProtocol: return "protocol";
    case ErrorCode::kScoring: return "scoring";
    case ErrorCode::kEnvironment: return "environment";
    case ErrorCode::kGoldError: return "gold-error";
    case ErrorCode::kUndefinedMetric: return "undefined-metric";
    case ErrorCode::kDegenerateGap: return "degenerate-gap";
    case ErrorCode::kDegenerateCost: return "degenerate-cost";
    case ErrorCode::kUndefinedBaseline: return "undefined-baseline";
    case ErrorCode::kLengthMismatch: return "length-mismatch";
    case ErrorCode::kDataset: return "dataset";
    case ErrorCode::kIo: return "io";
  }
  return "unknown";
}

/// Every failure the engine surfaces. The code identifies the failure
/// class; the message carries the specifics (digest, stage, line number).
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + message),
        code_(code),
        detail_(message) {}

  ErrorCode code() const noexcept { return code_; }
  // The message without the code prefix.
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

}  // namespace tiersql
