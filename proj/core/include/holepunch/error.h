#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace holepunch {

enum class ErrorCode {
  kInvalidArgument,
  kSchedulingInPast,
  kPortExhaustion,
  kPortInUse,
  kMaxRetriesExceeded,
  kUnreachablePeer,
  kValidationTimeout,
  kNotQuic,
  kMalformedMessage,
  kPeerNotRegistered,
  kPunchFailed,
  kMigrationFailed,
  kTopologyMismatch,
  kIdentityViolation,
  kUnknownNode,
  kInvalidConfig,
  kIoFailure,
};

std::string_view to_string(ErrorCode code);

// Every failure the library reports is an Error carrying one of the codes
// above; modeled outcomes (drops, failed punches) are values, not errors.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what);

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& what);

}  // namespace holepunch
