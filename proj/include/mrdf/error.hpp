#pragma once

#include <stdexcept>
#include <string>

namespace mrdf {

// Every library failure carries a stable, machine-parsable code that the CLI
// prints as `error: <code>: <message>`.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& what)
      : std::runtime_error(what), code_(std::move(code)) {}
  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& what) : Error("E_DIMENSION", what) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error("E_CONFIG", what) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error("E_NUMERIC", what) {}
};

class UsageError : public Error {
 public:
  explicit UsageError(const std::string& what) : Error("E_USAGE", what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error("E_IO", what) {}
};

}  // namespace mrdf
