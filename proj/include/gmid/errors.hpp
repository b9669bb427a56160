#pragma once

#include <stdexcept>

namespace gmid {

/// Numerical failure (instability, factorization, sampler collapse), as
/// opposed to invalid input, which is reported with std::invalid_argument.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace gmid
