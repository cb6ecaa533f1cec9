#pragma once

#include <stdexcept>
#include <string>

namespace cil {

/// Raised when an update or evaluation produces NaN/Inf.
class NumericError : public std::runtime_error {
public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

/// Raised when the exemplar memory can no longer hold one sample per class.
class CapacityError : public std::runtime_error {
public:
  explicit CapacityError(const std::string& what) : std::runtime_error(what) {}
};

/// Raised on malformed input files (CSV datasets, checkpoints, configs).
class IngestError : public std::runtime_error {
public:
  explicit IngestError(const std::string& what) : std::runtime_error(what) {}
};

/// Raised on invalid experiment configuration (maps to CLI exit code 2).
class ConfigError : public std::runtime_error {
public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

} // namespace cil
