#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace tplprog {

/// Base class for every error raised by the library. The CLI maps the
/// subclasses onto process exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed token sequence or program text. `position` is the offending
/// token index (or character offset for text input).
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t position)
      : Error(what + " (at position " + std::to_string(position) + ")"), position_(position) {}
  std::size_t position() const { return position_; }

 private:
  std::size_t position_;
};

/// A sequence or structure exceeded one of the fixed caps (holes, sentinels,
/// shared variables, sequence length).
class CapError : public Error {
 public:
  using Error::Error;
};

class LengthOverflow : public CapError {
 public:
  using CapError::CapError;
};

/// Ill-typed tree or invalid argument to a tree operation.
class TypeError : public Error {
 public:
  using Error::Error;
};

/// Execution of a concrete program failed.
class ExecError : public Error {
 public:
  using Error::Error;
};

class SceneOverflow : public ExecError {
 public:
  using ExecError::ExecError;
};

class InvalidReference : public ExecError {
 public:
  using ExecError::ExecError;
};

class SamplingError : public Error {
 public:
  using Error::Error;
};

class DecodeError : public Error {
 public:
  using Error::Error;
};

class InferenceFailure : public Error {
 public:
  using Error::Error;
};

/// Bad input data (files, datasets, checkpoints, domain mismatches).
class DataError : public Error {
 public:
  using Error::Error;
};

}  // namespace tplprog
