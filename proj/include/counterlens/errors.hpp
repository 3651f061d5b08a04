#pragma once
// Exception hierarchy shared by every counterlens module.

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>

namespace counterlens {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad or incomplete configuration (ranges file, peaks, server config).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Input data violating a documented invariant (negative ground truth,
// non-finite values, malformed records).
class DataError : public Error {
 public:
  using Error::Error;
};

// A raw value outside its normalization range.
class RangeViolation : public Error {
 public:
  RangeViolation(std::string metric, double value, double floor, double ceiling)
      : Error("value " + std::to_string(value) + " for " + metric + " outside range [" +
              std::to_string(floor) + ", " + std::to_string(ceiling) + "]"),
        metric_(std::move(metric)) {}

  const std::string& metric() const noexcept { return metric_; }

 private:
  std::string metric_;
};

// A normalized value outside [0, 1]; usually a malformed model answer.
class ValidationError : public Error {
 public:
  ValidationError(std::string metric, const std::string& what)
      : Error(what), metric_(std::move(metric)) {}

  const std::string& metric() const noexcept { return metric_; }

 private:
  std::string metric_;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

class GenerationError : public Error {
 public:
  using Error::Error;
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

// The analytic oracle cannot label code that lacks generator metadata.
class OracleUnavailable : public Error {
 public:
  using Error::Error;
};

class BackendUnavailable : public Error {
 public:
  BackendUnavailable(std::string backend, const std::string& why)
      : Error("backend '" + backend + "' unavailable: " + why), backend_(std::move(backend)) {}

  const std::string& backend() const noexcept { return backend_; }

 private:
  std::string backend_;
};

class BackendTimeout : public Error {
 public:
  BackendTimeout(std::string backend, const std::string& why)
      : Error("backend '" + backend + "' timed out: " + why), backend_(std::move(backend)) {}

  const std::string& backend() const noexcept { return backend_; }

 private:
  std::string backend_;
};

class UnsupportedArchitecture : public Error {
 public:
  using Error::Error;
};

}  // namespace counterlens
