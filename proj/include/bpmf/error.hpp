// Copyright 2026 The bpmf-dist Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace bpmf {

enum class ErrorKind {
  kInvalidArgument,
  kNotPositiveDefinite,
  kSingularFactor,
  kBadDegreesOfFreedom,
  kParseError,
  kDuplicateEntry,
  kIndexOutOfHeaderBounds,
  kSchemaMismatch,
  kTooSparse,
  kLengthMismatch,
  kEmpty,
  kMoreNodesThanItems,
  kDisconnected,
  kTimeout,
  kChecksumFailure,
  kHandshakeMismatch,
  kDuplicateMessage,
  kTransportFailure,
  kIoError,
  kCheckpointMismatch,
};

std::string_view to_string(ErrorKind kind);

/// Every failure raised by the library carries one of the kinds above so the
/// CLI can map it onto an exit code.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what);
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what);
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

[[noreturn]] void fail(ErrorKind kind, const std::string& what);

}  // namespace bpmf
