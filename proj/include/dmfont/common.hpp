#pragma once

#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace dmfont {

enum class ErrorCode {
  CharacterOutOfRange,
  MalformedCluster,
  LabelOutOfRange,
  CoverageImpossible,
  EmptyFont,
  UnreadableImage,
  ShapeMismatch,
  MissingComponent,
  NonFiniteLoss,
  InsufficientAccuracy,
  DegenerateCovariance,
  ConfigMismatch,
  InvalidArgument,
  IoError,
};

inline std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::CharacterOutOfRange: return "CharacterOutOfRange";
    case ErrorCode::MalformedCluster: return "MalformedCluster";
    case ErrorCode::LabelOutOfRange: return "LabelOutOfRange";
    case ErrorCode::CoverageImpossible: return "CoverageImpossible";
    case ErrorCode::EmptyFont: return "EmptyFont";
    case ErrorCode::UnreadableImage: return "UnreadableImage";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::MissingComponent: return "MissingComponent";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::InsufficientAccuracy: return "InsufficientAccuracy";
    case ErrorCode::DegenerateCovariance: return "DegenerateCovariance";
    case ErrorCode::ConfigMismatch: return "ConfigMismatch";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::IoError: return "IoError";
  }
  return "UnknownError";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + message),
        code_(code),
        message_(message) {}

  ErrorCode code() const noexcept { return code_; }
  // Message without the code-name prefix that what() carries.
  const std::string& message() const noexcept { return message_; }

 private:
  ErrorCode code_;
  std::string message_;
};

[[noreturn]] inline void raise(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

#define DMFONT_CHECK(cond, code, message)                  \
  do {                                                     \
    if (!(cond)) ::dmfont::raise((code), (message));       \
  } while (0)

// Shape of an n-d array, outermost dimension first.
using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << 'x';
    os << s[i];
  }
  os << ']';
  return os.str();
}

inline bool same_shape(const Shape& a, const Shape& b) { return a == b; }

}  // namespace dmfont
