#pragma once

#include <stdexcept>
#include <string>

namespace masstlab {

// Base for all library errors. Messages are prefixed with the module that
// raised them so CLI diagnostics can name the failing component.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape metadata inconsistent with an operand.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Vector norm at or below the degeneracy floor.
class NormTooSmall : public Error {
 public:
  using Error::Error;
};

// Malformed file input; message carries file and line.
class ParseError : public Error {
 public:
  ParseError(const std::string& file, long line, const std::string& what)
      : Error(file + ":" + std::to_string(line) + ": " + what), line_(line) {}
  long line() const { return line_; }

 private:
  long line_ = 0;
};

// Invalid configuration value or unknown key.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace masstlab
