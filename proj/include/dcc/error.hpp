#pragma once

#include <stdexcept>
#include <string>

namespace dcc {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class HyperparameterError : public Error {
 public:
  using Error::Error;
};

// Raised for invalid model/run configuration. `path` is a JSON-pointer style
// location of the offending field, e.g. "/model/growth_rate".
class ConfigError : public Error {
 public:
  ConfigError(std::string path, const std::string& message)
      : Error(path + ": " + message), path_(std::move(path)) {}

  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

// Bad or incompatible on-disk data: dataset files, checkpoints, caches.
class DataError : public Error {
 public:
  using Error::Error;
};

// Non-finite loss, degenerate batch statistics, failed gradient checks.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace dcc
