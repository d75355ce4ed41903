#include "epic/error.hpp"

namespace epic {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::DegenerateCloud: return "DegenerateCloud";
    case ErrorKind::BadK: return "BadK";
    case ErrorKind::BadIndex: return "BadIndex";
    case ErrorKind::TooFewPoints: return "TooFewPoints";
    case ErrorKind::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorKind::EmptyEval: return "EmptyEval";
    case ErrorKind::LengthMismatch: return "LengthMismatch";
    case ErrorKind::ZeroReferenceError: return "ZeroReferenceError";
    case ErrorKind::FormatError: return "FormatError";
    case ErrorKind::BadConfig: return "BadConfig";
    case ErrorKind::ConfigError: return "ConfigError";
    case ErrorKind::IoError: return "IoError";
  }
  return "Unknown";
}

}  // namespace epic
