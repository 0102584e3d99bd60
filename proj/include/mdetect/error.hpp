#pragma once

#include <stdexcept>
#include <string>

namespace mdetect {

// Base of every error the library raises. The CLI maps ValidationFailure
// subclasses to one exit code and everything else to another.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ValidationFailure : public Error {
 public:
  using Error::Error;
};

// Bad configuration values (inverted thresholds, ratios that do not sum to 1).
class ConfigError : public ValidationFailure {
 public:
  using ValidationFailure::ValidationFailure;
};

// A metric value outside its schema range, or a broken trace invariant.
class ValidationError : public ValidationFailure {
 public:
  using ValidationFailure::ValidationFailure;
};

class ParseError : public ValidationFailure {
 public:
  ParseError(const std::string& file, std::size_t line, const std::string& what)
      : ValidationFailure(file + ":" + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

// More unique processes than the sample matrix has rows.
class CapacityError : public ValidationFailure {
 public:
  using ValidationFailure::ValidationFailure;
};

class ShapeError : public ValidationFailure {
 public:
  using ValidationFailure::ValidationFailure;
};

class UndefinedAucError : public Error {
 public:
  using Error::Error;
};

// Non-finite loss or gradient during training.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, int epoch, int batch)
      : Error(what), epoch_(epoch), batch_(batch) {}

  int epoch() const noexcept { return epoch_; }
  int batch() const noexcept { return batch_; }

 private:
  int epoch_;
  int batch_;
};

}  // namespace mdetect
