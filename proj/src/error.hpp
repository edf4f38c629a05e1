#pragma once

#include <stdexcept>
#include <string>

namespace haca {

// Mirrors the CLI exit codes: 1 usage, 2 data, 3 training, 4 comparability.
enum class ErrorCode : int {
  Usage = 1,
  Data = 2,
  Training = 3,
  Comparability = 4,
  Internal = 5,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

// Structurally invalid caption; `position` is the first offending token index.
class ParseError : public Error {
 public:
  ParseError(size_t position, const std::string& message)
      : Error(ErrorCode::Data, message), position_(position) {}

  size_t position() const { return position_; }

 private:
  size_t position_;
};

// Requested corruption kind cannot apply to this video; callers retry.
class CorruptionInapplicable : public Error {
 public:
  explicit CorruptionInapplicable(const std::string& message)
      : Error(ErrorCode::Data, message) {}
};

}  // namespace haca
