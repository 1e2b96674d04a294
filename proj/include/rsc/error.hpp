#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace rsc {

enum class ErrorKind {
  MalformedDataset,
  InconsistentGeometry,
  DecodeFailure,
  ObjectNotFound,
  InvalidArgument,
  ShapeMismatch,
  OutOfRange,
  Io,
  ProviderFailure,
  UnknownName,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::MalformedDataset: return "malformed dataset";
    case ErrorKind::InconsistentGeometry: return "inconsistent geometry";
    case ErrorKind::DecodeFailure: return "decode failure";
    case ErrorKind::ObjectNotFound: return "object not found";
    case ErrorKind::InvalidArgument: return "invalid argument";
    case ErrorKind::ShapeMismatch: return "shape mismatch";
    case ErrorKind::OutOfRange: return "out of range";
    case ErrorKind::Io: return "io error";
    case ErrorKind::ProviderFailure: return "provider failure";
    case ErrorKind::UnknownName: return "unknown name";
  }
  return "error";
}

// what() reads "<kind>: <detail>" so callers can match on the kind prefix.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& detail)
      : std::runtime_error(std::string(to_string(kind)) + (detail.empty() ? "" : ": " + detail)),
        kind_(kind),
        detail_(detail) {}

  ErrorKind kind() const noexcept { return kind_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorKind kind_;
  std::string detail_;
};

inline void require(bool condition, ErrorKind kind, const std::string& detail) {
  if (!condition) throw Error(kind, detail);
}

}  // namespace rsc
