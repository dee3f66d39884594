#pragma once

#include <stdexcept>
#include <string>

namespace goodlab {

// Caller broke a documented precondition (shape mismatch, label mismatch, ...).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Bad user input: config files, CLI flags, dataset directories.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A forward value or a gradient became NaN/inf. Training aborts on this.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace goodlab
