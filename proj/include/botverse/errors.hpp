#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace botverse {

enum class ErrorCode {
  MissingField,
  OutOfRange,
  MalformedJson,
  DanglingReference,
  NegativeAge,
  InvalidScenario,
  InvalidSpec,
  EmptyQueue,
  Causality,
  NotRunning,
  ConnectFailed,
  ProtocolError,
  Io,
  MalformedLine,
  BackendTimeout,
  BackendRejected,
  AllRetriesExhausted,
  RendererUnavailable,
  ConnectionFailed,
  MigrationConflict,
  IntegrityViolation,
  InvalidCursor,
  NoCheckpoint,
  CorruptCheckpoint,
  NoAssignees,
  DuplicateNarrative,
  UnknownNarrative,
  InvalidCommand,
  Conflict,
};

std::string_view to_string(ErrorCode code);

// Every failure surfaced by the library. `detail` carries the offending field
// path, line number, HTTP status or similar, depending on the code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, std::string detail);

  ErrorCode code() const noexcept { return code_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

}  // namespace botverse
