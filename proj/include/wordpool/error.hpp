#pragma once

#include <stdexcept>
#include <string>

namespace wordpool {

/// Invalid configuration or arguments. The CLI maps this to exit code 2.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Input data that cannot be used (empty corpus, corpus shorter than a block, ...).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A NaN or infinity surfaced in a forward or backward pass.
class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace wordpool
