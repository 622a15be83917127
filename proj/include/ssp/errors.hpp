// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace ssp {

/// Root of the library's exception hierarchy. Each subclass maps to one
/// failure category; the CLI translates categories to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes are incompatible.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A configuration value is invalid or unknown.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A caller violated an operation's precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// A numeric argument lies outside the domain of the operation.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values appeared where finite ones are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// A file on disk is malformed or fails its integrity check.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// A required file or directory does not exist.
class MissingArtifactError : public Error {
 public:
  using Error::Error;
};

}  // namespace ssp
