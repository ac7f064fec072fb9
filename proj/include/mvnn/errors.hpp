#pragma once

#include <stdexcept>
#include <string>

namespace mvnn {

/// Base of every error raised by the library. The CLI maps each subclass to
/// an exit code (see exit_code()).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not fit the operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration value or a model that lacks a requested component.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// An API precondition on call order or arguments was violated.
class UsageError : public Error {
 public:
  using Error::Error;
};

/// A file could not be read, decoded or written.
class IngestError : public Error {
 public:
  using Error::Error;
};

/// Training diverged (non-finite loss) or could not proceed.
class TrainingError : public Error {
 public:
  using Error::Error;
};

/// Non-finite value where a finite one is required.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Process exit code for an error: 1 usage/config, 2 data/ingest, 3 training.
inline int exit_code(const Error& e) {
  if (dynamic_cast<const IngestError*>(&e) != nullptr) return 2;
  if (dynamic_cast<const TrainingError*>(&e) != nullptr) return 3;
  return 1;
}

}  // namespace mvnn
