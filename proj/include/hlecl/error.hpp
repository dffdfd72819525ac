#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace hlecl {

enum class ErrorKind {
  // taxonomy
  kCycleDetected,
  kCrossLevelParent,
  kDuplicateLabel,
  kEmptyLevel,
  kMissingParent,
  kMultipleParents,
  kLevelOutOfRange,
  kNoSuchLabel,
  // datasets
  kInvalidSpread,
  kZeroSamples,
  kParseError,
  kUnknownLabel,
  kDimMismatch,
  kFractionOutOfRange,
  kIoError,
  // streams
  kNotTwoLevels,
  kTooManyTasks,
  kInsufficientSamples,
  // learner
  kBadShape,
  kNoClassesAtLevel,
  kAlreadyRegistered,
  kUnregisteredClass,
  kNaNGradient,
  kInvalidArgument,
  // memory / sampling
  kEmptyMemory,
  kEmptyBatch,
  // config
  kConfigError,
  kUnknownKey,
  kMissingKey,
  kRangeError,
  kUnsweepableKey,
};

constexpr std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kCycleDetected: return "CycleDetected";
    case ErrorKind::kCrossLevelParent: return "CrossLevelParent";
    case ErrorKind::kDuplicateLabel: return "DuplicateLabel";
    case ErrorKind::kEmptyLevel: return "EmptyLevel";
    case ErrorKind::kMissingParent: return "MissingParent";
    case ErrorKind::kMultipleParents: return "MultipleParents";
    case ErrorKind::kLevelOutOfRange: return "LevelOutOfRange";
    case ErrorKind::kNoSuchLabel: return "NoSuchLabel";
    case ErrorKind::kInvalidSpread: return "InvalidSpread";
    case ErrorKind::kZeroSamples: return "ZeroSamples";
    case ErrorKind::kParseError: return "ParseError";
    case ErrorKind::kUnknownLabel: return "UnknownLabel";
    case ErrorKind::kDimMismatch: return "DimMismatch";
    case ErrorKind::kFractionOutOfRange: return "FractionOutOfRange";
    case ErrorKind::kIoError: return "IoError";
    case ErrorKind::kNotTwoLevels: return "NotTwoLevels";
    case ErrorKind::kTooManyTasks: return "TooManyTasks";
    case ErrorKind::kInsufficientSamples: return "InsufficientSamples";
    case ErrorKind::kBadShape: return "BadShape";
    case ErrorKind::kNoClassesAtLevel: return "NoClassesAtLevel";
    case ErrorKind::kAlreadyRegistered: return "AlreadyRegistered";
    case ErrorKind::kUnregisteredClass: return "UnregisteredClass";
    case ErrorKind::kNaNGradient: return "NaNGradient";
    case ErrorKind::kInvalidArgument: return "InvalidArgument";
    case ErrorKind::kEmptyMemory: return "EmptyMemory";
    case ErrorKind::kEmptyBatch: return "EmptyBatch";
    case ErrorKind::kConfigError: return "ConfigError";
    case ErrorKind::kUnknownKey: return "UnknownKey";
    case ErrorKind::kMissingKey: return "MissingKey";
    case ErrorKind::kRangeError: return "RangeError";
    case ErrorKind::kUnsweepableKey: return "UnsweepableKey";
  }
  return "Unknown";
}

/// Every failure raised by the library carries a machine-checkable kind.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Parse failures also remember the 1-based line they occurred on.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& message)
      : Error(ErrorKind::kParseError, "line " + std::to_string(line) + ": " + message), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) { throw Error(kind, message); }

}  // namespace hlecl
