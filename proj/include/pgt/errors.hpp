#pragma once

#include <stdexcept>
#include <string>

namespace pgt {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Mismatched extents between arrays, parameters or carried state.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values where finite ones are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Argument outside an operation's domain (e.g. pooling zero frames).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Inconsistent (T, T', P) triple or a schedule that does not fit a sequence.
class ScheduleError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration key or value.
class ConfigError : public Error {
 public:
  ConfigError(const std::string& key, const std::string& what)
      : Error(key.empty() ? what : key + ": " + what), key_(key) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

/// API used outside its contract (e.g. a Markov step on a local layer).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Sequence too short for the requested inference mode.
class LengthError : public Error {
 public:
  using Error::Error;
};

/// Invalid synthetic task description.
class SpecError : public Error {
 public:
  using Error::Error;
};

/// Malformed or incompatible checkpoint / data file.
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace pgt
