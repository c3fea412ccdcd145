#pragma once

#include <stdexcept>
#include <string>

namespace skild {

enum class ErrorKind {
  MalformedLayout,
  NoGoal,
  MultipleGoals,
  MissingStartRegion,
  UnreachableGoal,
  InvalidConfig,
  NoPath,
  NoValidWindow,
  DemoGenerationFailed,
  ShapeMismatch,
  DimMismatch,
  MissingCheckpoint,
  NonFiniteLoss,
  EmptyInput,
  IoError,
};

inline const char* error_kind_name(ErrorKind k) {
  switch (k) {
    case ErrorKind::MalformedLayout: return "MalformedLayout";
    case ErrorKind::NoGoal: return "NoGoal";
    case ErrorKind::MultipleGoals: return "MultipleGoals";
    case ErrorKind::MissingStartRegion: return "MissingStartRegion";
    case ErrorKind::UnreachableGoal: return "UnreachableGoal";
    case ErrorKind::InvalidConfig: return "InvalidConfig";
    case ErrorKind::NoPath: return "NoPath";
    case ErrorKind::NoValidWindow: return "NoValidWindow";
    case ErrorKind::DemoGenerationFailed: return "DemoGenerationFailed";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::DimMismatch: return "DimMismatch";
    case ErrorKind::MissingCheckpoint: return "MissingCheckpoint";
    case ErrorKind::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorKind::EmptyInput: return "EmptyInput";
    case ErrorKind::IoError: return "IoError";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& msg)
      : std::runtime_error(std::string(error_kind_name(kind)) + ": " + msg), kind_(kind) {}

  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void raise(ErrorKind kind, const std::string& msg) { throw Error(kind, msg); }

}  // namespace skild
