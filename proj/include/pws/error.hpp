#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace pws {

enum class ErrorCode {
  ParseError,
  DuplicateId,
  EmptyRegistry,
  MissingLabel,
  UnknownLanguage,
  ClassTooSmall,
  TransportError,
  AuthError,
  TimeoutError,
  ImageLoadError,
  MissingBaseFeatures,
  TooManyCellErrors,
  SingleClass,
  ShapeMismatch,
  FeatureMismatch,
  LengthMismatch,
  Empty,
  KOutOfRange,
  ConfigError,
  IoError,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::DuplicateId: return "DuplicateId";
    case ErrorCode::EmptyRegistry: return "EmptyRegistry";
    case ErrorCode::MissingLabel: return "MissingLabel";
    case ErrorCode::UnknownLanguage: return "UnknownLanguage";
    case ErrorCode::ClassTooSmall: return "ClassTooSmall";
    case ErrorCode::TransportError: return "TransportError";
    case ErrorCode::AuthError: return "AuthError";
    case ErrorCode::TimeoutError: return "TimeoutError";
    case ErrorCode::ImageLoadError: return "ImageLoadError";
    case ErrorCode::MissingBaseFeatures: return "MissingBaseFeatures";
    case ErrorCode::TooManyCellErrors: return "TooManyCellErrors";
    case ErrorCode::SingleClass: return "SingleClass";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::FeatureMismatch: return "FeatureMismatch";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::Empty: return "Empty";
    case ErrorCode::KOutOfRange: return "KOutOfRange";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

/// Every failure raised by the library. `code()` identifies the contract that
/// was violated; `what()` carries the human-readable detail.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace pws
