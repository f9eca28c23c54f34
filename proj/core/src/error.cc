#include "holepunch/error.h"

namespace holepunch {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kSchedulingInPast: return "SchedulingInPast";
    case ErrorCode::kPortExhaustion: return "PortExhaustion";
    case ErrorCode::kPortInUse: return "PortInUse";
    case ErrorCode::kMaxRetriesExceeded: return "MaxRetriesExceeded";
    case ErrorCode::kUnreachablePeer: return "UnreachablePeer";
    case ErrorCode::kValidationTimeout: return "ValidationTimeout";
    case ErrorCode::kNotQuic: return "NotQuic";
    case ErrorCode::kMalformedMessage: return "MalformedMessage";
    case ErrorCode::kPeerNotRegistered: return "PeerNotRegistered";
    case ErrorCode::kPunchFailed: return "PunchFailed";
    case ErrorCode::kMigrationFailed: return "MigrationFailed";
    case ErrorCode::kTopologyMismatch: return "TopologyMismatch";
    case ErrorCode::kIdentityViolation: return "IdentityViolation";
    case ErrorCode::kUnknownNode: return "UnknownNode";
    case ErrorCode::kInvalidConfig: return "InvalidConfig";
    case ErrorCode::kIoFailure: return "IoFailure";
  }
  return "Unknown";
}

Error::Error(ErrorCode code, const std::string& what)
    : std::runtime_error(std::string(to_string(code)) + ": " + what),
      code_(code) {}

void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

}  // namespace holepunch
