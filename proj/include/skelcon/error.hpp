#pragma once

#include <stdexcept>
#include <string>

namespace skelcon {

/// Base of every error thrown by the library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ArgumentError : Error {
  using Error::Error;
};

/// Malformed text input (canonical skeleton files, configs, checkpoints).
struct ParseError : Error {
  using Error::Error;
};

/// Well-formed input that disagrees with the declared schema.
struct SchemaError : Error {
  using Error::Error;
};

struct ValidationError : Error {
  using Error::Error;
};

/// A caller broke a documented contract (shape mismatch, non-unit embedding).
struct ContractError : Error {
  using Error::Error;
};

struct PreconditionError : Error {
  using Error::Error;
};

/// Zero-norm projections, single-class training sets and similar.
struct DegenerateError : Error {
  using Error::Error;
};

struct NonFiniteError : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

/// Carries the offending key path, e.g. "trainer.tau".
struct ConfigError : Error {
  ConfigError(std::string key, const std::string& what)
      : Error("config key '" + key + "': " + what), key_path(std::move(key)) {}
  std::string key_path;
};

}  // namespace skelcon
