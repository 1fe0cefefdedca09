#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace seqtag {

// Error categories map one-to-one onto CLI exit codes.
enum class ErrorKind {
  kUsage = 1,    // bad arguments, bad configuration
  kData = 2,     // malformed or missing input files
  kRuntime = 3,  // numeric failures and internal contract violations
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, std::string code, const std::string& message)
      : std::runtime_error(message), kind_(kind), code_(std::move(code)) {}

  ErrorKind kind() const { return kind_; }
  // Short machine-friendly name, e.g. "UnknownTag".
  const std::string& code() const { return code_; }

 private:
  ErrorKind kind_;
  std::string code_;
};

inline Error usage_error(const std::string& code, const std::string& msg) {
  return Error(ErrorKind::kUsage, code, code + ": " + msg);
}
inline Error data_error(const std::string& code, const std::string& msg) {
  return Error(ErrorKind::kData, code, code + ": " + msg);
}
inline Error runtime_error(const std::string& code, const std::string& msg) {
  return Error(ErrorKind::kRuntime, code, code + ": " + msg);
}

// Errors that carry a 1-based line number in the offending input.
class LineError : public Error {
 public:
  LineError(std::string code, std::size_t line, const std::string& msg)
      : Error(ErrorKind::kData, code,
              code + " at line " + std::to_string(line) + ": " + msg),
        line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

}  // namespace seqtag
