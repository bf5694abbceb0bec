#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace deeppce {

/// Broad failure categories. The CLI prints `to_string(code)` as the
/// machine-parsable part of its one-line error message.
enum class ErrorCode {
  InvalidArgument,
  UnsupportedDegree,
  Domain,
  DimensionMismatch,
  TooLarge,
  RankDeficient,
  NonFinite,
  MalformedFile,
  VersionMismatch,
  ChecksumMismatch,
  Io,
  NotFolded,
  MissingStatistics,
  TrainingFailed,
  Degenerate,
};

constexpr std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::InvalidArgument: return "invalid-argument";
    case ErrorCode::UnsupportedDegree: return "unsupported-degree";
    case ErrorCode::Domain: return "domain";
    case ErrorCode::DimensionMismatch: return "dimension-mismatch";
    case ErrorCode::TooLarge: return "too-large";
    case ErrorCode::RankDeficient: return "rank-deficient";
    case ErrorCode::NonFinite: return "non-finite";
    case ErrorCode::MalformedFile: return "malformed-file";
    case ErrorCode::VersionMismatch: return "version-mismatch";
    case ErrorCode::ChecksumMismatch: return "checksum-mismatch";
    case ErrorCode::Io: return "io";
    case ErrorCode::NotFolded: return "not-folded";
    case ErrorCode::MissingStatistics: return "missing-statistics";
    case ErrorCode::TrainingFailed: return "training-failed";
    case ErrorCode::Degenerate: return "degenerate";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// Throws `Error(code, message)` unless `condition` holds.
inline void require(bool condition, ErrorCode code, const std::string& message) {
  if (!condition) throw Error(code, message);
}

inline void require(bool condition, ErrorCode code, const char* message) {
  if (!condition) throw Error(code, message);
}

}  // namespace deeppce
