#pragma once

#include <stdexcept>
#include <string>

namespace icce {

/// Base for every failure raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent on-disk data.
class LoadError : public Error {
 public:
  using Error::Error;
};

/// Invalid user configuration; the CLI maps this to exit code 1.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A numerical failure during training (non-finite loss, logits).
class TrainingError : public Error {
 public:
  using Error::Error;
};

}  // namespace icce
