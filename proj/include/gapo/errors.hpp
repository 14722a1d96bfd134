#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace gapo {

// Base for every error the library raises on purpose.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A NaN/Inf appeared in a computation. `where()` names the primitive or step.
class NumericError : public Error {
 public:
  NumericError(std::string where, const std::string& what)
      : Error(what), where_(std::move(where)) {}
  const std::string& where() const noexcept { return where_; }

 private:
  std::string where_;
};

// Bad user-supplied configuration (CLI exit code 2).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Invalid argument to a library call (token out of range, empty batch, ...).
class InputError : public Error {
 public:
  using Error::Error;
};

// Malformed file content; line is 1-based, 0 when not applicable.
class FormatError : public Error {
 public:
  FormatError(std::size_t line, const std::string& what)
      : Error(line > 0 ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

// Parameters differ after a perturb/restore cycle. Always fatal.
class RestoreError : public Error {
 public:
  using Error::Error;
};

}  // namespace gapo
