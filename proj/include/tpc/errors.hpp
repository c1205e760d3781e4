#pragma once

#include <stdexcept>
#include <string>

namespace tpc {

/// Violated precondition of a library call (bad argument, misuse of the tape).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Operand extents do not line up.
class DimensionError : public ContractError {
 public:
  using ContractError::ContractError;
};

/// Invalid configuration value or unknown key. `key()` names the offender.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string key, const std::string& message)
      : std::runtime_error(key.empty() ? message : key + ": " + message), key_(std::move(key)) {}
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

/// Malformed or truncated file.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// NaN / Inf where finite values were required.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace tpc
