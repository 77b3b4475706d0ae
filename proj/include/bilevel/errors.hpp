#pragma once

#include <stdexcept>
#include <string>

namespace bilevel {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor or operator shapes do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A scalar hyperparameter is outside its admissible range.
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// A SaddleSpec or AdjointSpec violates its construction contract.
class SpecError : public Error {
 public:
  using Error::Error;
};

/// Malformed file (PGM, F64T, config).
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Iterates became non-finite.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

/// Dense oracle requested on a problem that is too large for dense solves.
class OracleSizeError : public Error {
 public:
  using Error::Error;
};

/// An iterative solver exhausted its iteration cap before certifying the
/// requested accuracy. Carries the best certified bounds it reached.
class ToleranceNotReached : public Error {
 public:
  ToleranceNotReached(const std::string& what, double best_first, double best_second)
      : Error(what), best_first_(best_first), best_second_(best_second) {}

  double best_first() const { return best_first_; }
  double best_second() const { return best_second_; }

 private:
  double best_first_;
  double best_second_;
};

}  // namespace bilevel
