#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace cbt {

// Base of every error raised by the library. The CLI maps UsageError and
// ValidationError to exit code 1 and everything else to exit code 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(std::string key, int line, const std::string& what)
      : Error("line " + std::to_string(line) + (key.empty() ? "" : " (key '" + key + "')") + ": " + what),
        key_(std::move(key)),
        line_(line) {}
  const std::string& key() const noexcept { return key_; }
  int line() const noexcept { return line_; }

 private:
  std::string key_;
  int line_;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

class IntegrityError : public Error {
 public:
  using Error::Error;
};

class UnsupportedVersionError : public Error {
 public:
  explicit UnsupportedVersionError(std::uint32_t version)
      : Error("unsupported checkpoint version " + std::to_string(version)), version_(version) {}
  std::uint32_t version() const noexcept { return version_; }

 private:
  std::uint32_t version_;
};

class DivergenceError : public Error {
 public:
  DivergenceError(std::int64_t step, const std::string& what)
      : Error("training diverged at step " + std::to_string(step) + ": " + what), step_(step) {}
  std::int64_t step() const noexcept { return step_; }

 private:
  std::int64_t step_;
};

class DatasetError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class ArityError : public Error {
 public:
  using Error::Error;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

class UsageError : public Error {
 public:
  using Error::Error;
};

}  // namespace cbt
