#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace searchrec {

using Vector = std::vector<double>;
using Matrix = std::vector<Vector>;  // row-major, rows are probability vectors where relevant

/// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad input: malformed file, violated precondition, inconsistent arguments.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// An iterative estimator stopped before meeting its tolerance.
class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, double final_gradient_norm)
      : Error(what), final_gradient_norm_(final_gradient_norm) {}
  double final_gradient_norm() const { return final_gradient_norm_; }

 private:
  double final_gradient_norm_;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw ValidationError(message);
}

}  // namespace searchrec
