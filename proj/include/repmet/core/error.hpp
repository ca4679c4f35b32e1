#pragma once

#include <stdexcept>
#include <string>

namespace repmet {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor shapes passed to an operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A value sits on a singular point of an operation (zero-norm vector,
/// total underflow, ...).
class DegenerateError : public Error {
 public:
  using Error::Error;
};

/// Invalid argument or configuration.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Malformed input file. Carries the 1-based line number when known.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error(line ? what + " (line " + std::to_string(line) + ")" : what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_ = 0;
};

/// Non-finite loss during optimization.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace repmet
