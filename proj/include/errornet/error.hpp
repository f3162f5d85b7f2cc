#pragma once

#include <stdexcept>
#include <string>

namespace errornet {

// Base class for all library errors. Subclasses map onto CLI exit codes:
// usage/config -> 1, data/io/format -> 2, numerical -> 3.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor dimension or layout mismatch.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// API misuse (backward called twice, unseeded rng, missing grad, ...).
class UsageError : public Error {
 public:
  using Error::Error;
};

// Invalid or inconsistent configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Dataset-level problems (missing samples, count mismatches, bad masks).
class DataError : public Error {
 public:
  using Error::Error;
};

// Filesystem / codec failures; message names the offending file.
class IoError : public Error {
 public:
  using Error::Error;
};

// Malformed serialized payloads (checkpoints); message names the offset.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Non-finite values where finite ones are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace errornet
