#pragma once

#include <stdexcept>
#include <string>

namespace physiofuse {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand extents do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A value lies outside the domain of the operation (log of a negative, label not in {0,1}, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// A precondition on the call sequence or arguments was violated.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// A file could not be parsed or does not match what the caller expects.
class LoadError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Invalid or unknown configuration entry.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// A segment from a fold's test set reached a training batch.
class LeakageError : public ContractError {
 public:
  using ContractError::ContractError;
};

}  // namespace physiofuse
