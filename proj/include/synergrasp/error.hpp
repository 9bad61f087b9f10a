#pragma once

#include <stdexcept>
#include <string>

namespace synergrasp {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input file. `line()` is 1-based, 0 when not tied to a line.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line = 0)
      : Error(line ? what + " (line " + std::to_string(line) + ")" : what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Precondition violated by the caller (bad dimensions, out-of-range parameters).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// A linear solve or factorization failed.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// An iterative optimizer left its admissible region.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

/// Failure inside one stage of a multi-stage operation; `stage()` names it.
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& what)
      : Error("[" + stage + "] " + what), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

}  // namespace synergrasp
