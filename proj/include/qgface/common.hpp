#pragma once

#include <stdexcept>
#include <string>

namespace qgface {

// Error taxonomy used across the library. Everything derives from Error so
// callers can catch broadly; the CLI maps these to single-line messages.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad arguments: shape mismatches, out-of-range labels, non-finite inputs.
class InvalidInputError : public Error {
 public:
  explicit InvalidInputError(const std::string& msg) : Error(msg) {}
};

// Operation called on an object in the wrong state (e.g. statistics not
// initialized yet).
class StateError : public Error {
 public:
  explicit StateError(const std::string& msg) : Error(msg) {}
};

// Numeric breakdown (NaN loss etc.); carries step context when available.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& msg) : Error(msg) {}
};

// Dataset ingestion problems; message names the offending path.
class IngestionError : public Error {
 public:
  explicit IngestionError(const std::string& msg) : Error(msg) {}
};

// Evaluation protocol violations (open-set probe, degenerate gallery, ...).
class ProtocolError : public Error {
 public:
  explicit ProtocolError(const std::string& msg) : Error(msg) {}
};

// Inconsistent configuration (empty queue with LQ pairs pending, bad ranges).
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& msg) : Error(msg) {}
};

}  // namespace qgface
