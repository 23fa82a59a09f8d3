#pragma once

#include <stdexcept>
#include <string>

namespace amfm {

/// Process exit codes shared by the CLI and the error types below.
enum class ExitCode : int {
  ok = 0,
  usage = 2,
  validation = 3,
  numeric = 4,
};

class Error : public std::runtime_error {
 public:
  Error(ExitCode code, const std::string& what) : std::runtime_error(what), code_(code) {}

  ExitCode code() const noexcept { return code_; }

  virtual const char* kind() const noexcept = 0;

 private:
  ExitCode code_;
};

/// Invalid argument or shape handed to an operation.
class ParameterError : public Error {
 public:
  explicit ParameterError(const std::string& what) : Error(ExitCode::usage, what) {}
  const char* kind() const noexcept override { return "parameter"; }
};

/// Malformed or inconsistent input data (manifests, label files, tensors).
class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& what) : Error(ExitCode::validation, what) {}
  const char* kind() const noexcept override { return "validation"; }
};

/// NaN/Inf during training, or an undefined metric.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(ExitCode::numeric, what) {}
  const char* kind() const noexcept override { return "numeric"; }
};

inline void require(bool cond, const std::string& what) {
  if (!cond) throw ParameterError(what);
}

}  // namespace amfm
