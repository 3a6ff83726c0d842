#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace adair {

enum class ErrorKind {
  ShapeMismatch,
  DivisionByZero,
  InvalidGroups,
  NonScalarLoss,
  NonFinite,
  UnsupportedSize,
  OddExtent,
  InvalidRange,
  HeadMismatch,
  InvalidConfig,
  EmptyInput,
  CorruptCheckpoint,
  ConfigMismatch,
  UnnormalizedKernel,
  PatchTooLarge,
  NaNLoss,
  ImageTooSmall,
  MalformedHeader,
  TruncatedPayload,
  Io,
};

std::string_view to_string(ErrorKind kind);

/// Single exception type for the library; callers branch on kind().
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

}  // namespace adair
