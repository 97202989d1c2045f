#pragma once

#include <stdexcept>
#include <string>

namespace capsnlstm {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor extents disagree with what an operation requires.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A caller broke an API precondition (backward on a non-scalar, empty sequence, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf surfaced in a computation that must stay finite.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration value. `field` names the offending key.
class ConfigError : public Error {
 public:
  ConfigError(std::string field, const std::string& message)
      : Error(field + ": " + message), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

// Input data problems: malformed files, rejected records, unknown links.
class DataError : public Error {
 public:
  using Error::Error;
};

}  // namespace capsnlstm
