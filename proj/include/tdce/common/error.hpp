#pragma once

#include <stdexcept>
#include <string>

namespace tdce {

// Input or contract violation detected before any work was done.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Failure while doing the work (I/O, numerics).
class RuntimeFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace tdce
