#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>

namespace complaints {

/// Root of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A required column or field is missing from an input record.
class SchemaError : public Error {
 public:
  SchemaError(std::string column, const std::string& what)
      : Error(what), column_(std::move(column)) {}
  const std::string& column() const noexcept { return column_; }

 private:
  std::string column_;
};

/// A record or file line holds a value outside its allowed domain.
/// `index` is the 0-based record index (or 1-based line number for
/// line-oriented text files, as documented by the thrower).
class ValidationError : public Error {
 public:
  ValidationError(std::size_t index, const std::string& what)
      : Error(what), index_(index) {}
  std::size_t index() const noexcept { return index_; }

 private:
  std::size_t index_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Tensor or batch dimensions do not line up.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Non-finite parameter, loss or gradient.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// API misuse, e.g. a fusion model called without feature bundles.
class UsageError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace complaints
