#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace aegis {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration, unknown names, missing files.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Vector or matrix shapes that do not line up.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values, failed factorizations, non-converging iterations.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Raised by rollouts when the plant produces a non-finite state.
class NumericOverflowError : public NumericError {
 public:
  NumericOverflowError(std::size_t step, const std::string& what)
      : NumericError(what), step_(step) {}

  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

class ParseError : public Error {
 public:
  ParseError(std::size_t line, std::size_t column, const std::string& message)
      : Error(std::to_string(line) + ":" + std::to_string(column) + ": " + message),
        line_(line),
        column_(column) {}

  std::size_t line() const noexcept { return line_; }
  std::size_t column() const noexcept { return column_; }

 private:
  std::size_t line_;
  std::size_t column_;
};

/// Training diverged or cannot start (e.g. single-class data).
class TrainingError : public Error {
 public:
  using Error::Error;
};

}  // namespace aegis
