#pragma once

#include <stdexcept>

namespace iftpp {

/// Argument outside the support or parameter space of a density.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Malformed user input: dataset files, configs, checkpoints, CLI flags.
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace iftpp
