#pragma once

#include <stdexcept>
#include <string>

namespace olens {

enum class ErrorKind {
  Shape,     // tensor dimension mismatch
  Value,     // bad value (label, confidence, parameter out of range)
  Parse,     // malformed input file
  Contract,  // API precondition violated
  Config,    // invalid model / run configuration
  Io,        // filesystem failure
  Usage,     // bad command-line invocation
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void raise(ErrorKind kind, const std::string& msg) { throw Error(kind, msg); }

}  // namespace olens
