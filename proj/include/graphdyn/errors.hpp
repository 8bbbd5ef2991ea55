#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace graphdyn {

/// Base class of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// log of a nonpositive value, sqrt of a negative value, reciprocal of zero.
class DomainError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t column)
      : Error(what + " at column " + std::to_string(column)), column_(column) {}
  std::size_t column() const noexcept { return column_; }

 private:
  std::size_t column_;
};

class ParamError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Integration stopped because a state exceeded the cap or the step size underflowed.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, double last_time)
      : Error(what), last_time_(last_time) {}
  double last_valid_time() const noexcept { return last_time_; }

 private:
  double last_time_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t line)
      : Error(what + " (line " + std::to_string(line) + ")"), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class DegenerateFeature : public Error {
 public:
  using Error::Error;
};

class NonFiniteLoss : public Error {
 public:
  NonFiniteLoss(const std::string& what, std::size_t epoch)
      : Error(what + " (epoch " + std::to_string(epoch) + ")"), epoch_(epoch) {}
  std::size_t epoch() const noexcept { return epoch_; }

 private:
  std::size_t epoch_;
};

class FitFailure : public Error {
 public:
  using Error::Error;
};

class EmptySample : public Error {
 public:
  using Error::Error;
};

class StageDependencyError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  ConfigError(const std::string& field, const std::string& what)
      : Error("config field '" + field + "': " + what), field_(field), reason_(what) {}
  const std::string& field() const noexcept { return field_; }
  const std::string& reason() const noexcept { return reason_; }

 private:
  std::string field_;
  std::string reason_;
};

class LockError : public Error {
 public:
  using Error::Error;
};

}  // namespace graphdyn
