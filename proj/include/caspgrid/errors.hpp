#pragma once

#include <stdexcept>
#include <string>

namespace caspgrid {

enum class ErrorKind {
  Config,          // invalid or inconsistent configuration
  Shape,           // tensor shape mismatch
  Data,            // malformed input data / unsupported file version
  Io,              // file system problems
  Numerical,       // non-finite values, failed numerical checks
  RejectedInput,   // caller passed a value outside the operation's domain
  MaskUnavailable, // agent mask cannot be built (agent out of bounds at t0)
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& msg)
      : std::runtime_error(msg), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void throw_error(ErrorKind kind, const std::string& msg) {
  throw Error(kind, msg);
}

inline const char* error_kind_name(ErrorKind k) {
  switch (k) {
    case ErrorKind::Config: return "config";
    case ErrorKind::Shape: return "shape";
    case ErrorKind::Data: return "data";
    case ErrorKind::Io: return "io";
    case ErrorKind::Numerical: return "numerical";
    case ErrorKind::RejectedInput: return "rejected-input";
    case ErrorKind::MaskUnavailable: return "mask-unavailable";
  }
  return "unknown";
}

}  // namespace caspgrid
