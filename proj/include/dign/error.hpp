#pragma once

#include <stdexcept>
#include <string>

namespace dign {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Extents or channel counts do not line up.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A caller violated an operation's precondition (non-binary mask, non-scalar loss, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// An object was used in the wrong lifecycle state (consumed graph, detached loss).
class StateError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

/// Checkpoint or weights built for a different configuration.
class IncompatibleError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class GenerationError : public Error {
 public:
  using Error::Error;
};

class TrainingError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace dign
