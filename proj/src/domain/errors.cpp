#include "botverse/errors.hpp"

namespace botverse {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MissingField: return "MissingField";
    case ErrorCode::OutOfRange: return "OutOfRange";
    case ErrorCode::MalformedJson: return "MalformedJson";
    case ErrorCode::DanglingReference: return "DanglingReference";
    case ErrorCode::NegativeAge: return "NegativeAge";
    case ErrorCode::InvalidScenario: return "InvalidScenario";
    case ErrorCode::InvalidSpec: return "InvalidSpec";
    case ErrorCode::EmptyQueue: return "EmptyQueue";
    case ErrorCode::Causality: return "Causality";
    case ErrorCode::NotRunning: return "NotRunning";
    case ErrorCode::ConnectFailed: return "ConnectFailed";
    case ErrorCode::ProtocolError: return "ProtocolError";
    case ErrorCode::Io: return "Io";
    case ErrorCode::MalformedLine: return "MalformedLine";
    case ErrorCode::BackendTimeout: return "BackendTimeout";
    case ErrorCode::BackendRejected: return "BackendRejected";
    case ErrorCode::AllRetriesExhausted: return "AllRetriesExhausted";
    case ErrorCode::RendererUnavailable: return "RendererUnavailable";
    case ErrorCode::ConnectionFailed: return "ConnectionFailed";
    case ErrorCode::MigrationConflict: return "MigrationConflict";
    case ErrorCode::IntegrityViolation: return "IntegrityViolation";
    case ErrorCode::InvalidCursor: return "InvalidCursor";
    case ErrorCode::NoCheckpoint: return "NoCheckpoint";
    case ErrorCode::CorruptCheckpoint: return "CorruptCheckpoint";
    case ErrorCode::NoAssignees: return "NoAssignees";
    case ErrorCode::DuplicateNarrative: return "DuplicateNarrative";
    case ErrorCode::UnknownNarrative: return "UnknownNarrative";
    case ErrorCode::InvalidCommand: return "InvalidCommand";
    case ErrorCode::Conflict: return "Conflict";
  }
  return "Unknown";
}

Error::Error(ErrorCode code, std::string detail)
    : std::runtime_error(std::string(to_string(code)) + (detail.empty() ? "" : ": " + detail)),
      code_(code),
      detail_(std::move(detail)) {}

}  // namespace botverse
