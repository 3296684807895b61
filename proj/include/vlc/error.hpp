#pragma once

#include <stdexcept>
#include <string>

namespace vlc {

/// Base for every error the library raises on bad input or configuration.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed file content (JSON syntax, JSONL line, binary container).
class ParseError : public Error {
 public:
  using Error::Error;
};

/// Well-formed input that violates a domain invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Missing or unusable configuration (word lists, rule tables, config fields).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A file produced by an earlier pipeline stage is absent.
class MissingArtifactError : public Error {
 public:
  using Error::Error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Loss became NaN or infinite during training.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace vlc
