#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace epic {

enum class ErrorKind {
  DegenerateCloud,
  BadK,
  BadIndex,
  TooFewPoints,
  NonFiniteLoss,
  EmptyEval,
  LengthMismatch,
  ZeroReferenceError,
  FormatError,
  BadConfig,
  ConfigError,
  IoError,
};

std::string_view to_string(ErrorKind kind);

/// Every failure raised by the library carries a category so that the CLI
/// can print a single machine-parsable line.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace epic
