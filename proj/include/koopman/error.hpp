#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace koopman {

enum class ErrorCode {
  InvalidArgument,
  DimensionMismatch,
  RankDeficient,
  Domain,
  Numerical,
  Divergence,
  Io,
  Parse,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "E_INVALID_ARGUMENT";
    case ErrorCode::DimensionMismatch: return "E_DIMENSION";
    case ErrorCode::RankDeficient: return "E_RANK_DEFICIENT";
    case ErrorCode::Domain: return "E_DOMAIN";
    case ErrorCode::Numerical: return "E_NUMERICAL";
    case ErrorCode::Divergence: return "E_DIVERGENCE";
    case ErrorCode::Io: return "E_IO";
    case ErrorCode::Parse: return "E_PARSE";
  }
  return "E_UNKNOWN";
}

/// Every failure raised by the library carries a stable machine-readable code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline void require(bool condition, ErrorCode code, const std::string& what) {
  if (!condition) throw Error(code, what);
}

}  // namespace koopman
