#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace churnrec {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid user-supplied configuration (dimensions, rates, counts).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed input file. Row and column are 1-based; 0 means "not applicable".
class ParseError : public Error {
 public:
  ParseError(const std::string& message, std::size_t row = 0, std::size_t column = 0)
      : Error(format(message, row, column)), row_(row), column_(column) {}

  std::size_t row() const { return row_; }
  std::size_t column() const { return column_; }

 private:
  static std::string format(const std::string& message, std::size_t row, std::size_t column) {
    std::string out = message;
    if (row != 0) out += " (row " + std::to_string(row);
    if (column != 0) out += (row != 0 ? ", column " : " (column ") + std::to_string(column);
    if (row != 0 || column != 0) out += ")";
    return out;
  }

  std::size_t row_;
  std::size_t column_;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

// An operation was called outside its domain, e.g. recourse for a retained user.
class PreconditionError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf appeared during training or search.
class NumericalError : public Error {
 public:
  using Error::Error;
};

inline void expect_dimension(std::size_t actual, std::size_t expected, const char* what) {
  if (actual != expected) {
    throw DimensionError(std::string(what) + ": expected " + std::to_string(expected) +
                         " entries, got " + std::to_string(actual));
  }
}

}  // namespace churnrec
