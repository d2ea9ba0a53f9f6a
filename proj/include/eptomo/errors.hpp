#pragma once

#include <stdexcept>
#include <string>

namespace eptomo {

/// Malformed or inconsistent input data (files, records, configuration).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A numerical procedure could not produce a meaningful result
/// (no coincidence peak, no fringe, degenerate fit, non-convergence).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace eptomo
