#pragma once

#include <stdexcept>
#include <string>

namespace soc2seq {

// Invalid configuration or inconsistent settings (CLI exit code 4).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input data: out-of-range token ids, bad file contents.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Unreadable/unwritable paths (CLI exit code 2).
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A graph operation was asked to work on a graph with no edges (CLI exit code 3).
class EmptyGraphError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

// Non-finite activations, losses or gradients.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A user has no embedding in any social table and fallback is disabled.
class ColdStartError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace soc2seq
