#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ultr {

/// Bad input: malformed files, invalid configs, violated preconditions.
/// The CLI maps these to exit code 1.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public ValidationError {
 public:
  ParseError(std::size_t line, const std::string& what)
      : ValidationError("line " + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// A propensity estimator could not produce a curve from the data it was given.
class EstimationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Training diverged or otherwise failed at runtime.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace ultr
