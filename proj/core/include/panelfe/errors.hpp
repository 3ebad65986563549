#pragma once

#include <stdexcept>
#include <string>

namespace panelfe {

// Malformed or inconsistent input: CSV problems, shape mismatches,
// non-finite entries, out-of-range arguments.
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

// A solver or estimator failed on structurally valid input: collinear
// designs, degenerate weights, non-convergence.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace panelfe
