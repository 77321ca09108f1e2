// Copyright 2026 The bpmf-dist Authors
// SPDX-License-Identifier: Apache-2.0

#include "bpmf/error.hpp"

namespace bpmf {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidArgument: return "InvalidArgument";
    case ErrorKind::kNotPositiveDefinite: return "NotPositiveDefinite";
    case ErrorKind::kSingularFactor: return "SingularFactor";
    case ErrorKind::kBadDegreesOfFreedom: return "BadDegreesOfFreedom";
    case ErrorKind::kParseError: return "ParseError";
    case ErrorKind::kDuplicateEntry: return "DuplicateEntry";
    case ErrorKind::kIndexOutOfHeaderBounds: return "IndexOutOfHeaderBounds";
    case ErrorKind::kSchemaMismatch: return "SchemaMismatch";
    case ErrorKind::kTooSparse: return "TooSparse";
    case ErrorKind::kLengthMismatch: return "LengthMismatch";
    case ErrorKind::kEmpty: return "Empty";
    case ErrorKind::kMoreNodesThanItems: return "MoreNodesThanItems";
    case ErrorKind::kDisconnected: return "Disconnected";
    case ErrorKind::kTimeout: return "Timeout";
    case ErrorKind::kChecksumFailure: return "ChecksumFailure";
    case ErrorKind::kHandshakeMismatch: return "HandshakeMismatch";
    case ErrorKind::kDuplicateMessage: return "DuplicateMessage";
    case ErrorKind::kTransportFailure: return "TransportFailure";
    case ErrorKind::kIoError: return "IoError";
    case ErrorKind::kCheckpointMismatch: return "CheckpointMismatch";
  }
  return "Unknown";
}

Error::Error(ErrorKind kind, const std::string& what)
    : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

ParseError::ParseError(std::size_t line, const std::string& what)
    : Error(ErrorKind::kParseError, "line " + std::to_string(line) + ": " + what), line_(line) {}

void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

}  // namespace bpmf
