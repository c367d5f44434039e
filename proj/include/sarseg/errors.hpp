#ifndef SARSEG_ERRORS_HPP
#define SARSEG_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace sarseg {

/// Base class for numerical failures raised by the library. Argument and
/// shape violations use std::invalid_argument / std::out_of_range instead.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Sample set cannot identify the requested model (e.g. zero variance).
class DegenerateDataError : public Error {
 public:
  using Error::Error;
};

/// A labeling carries no information about the smoothness parameter.
class EstimationUndefinedError : public Error {
 public:
  using Error::Error;
};

/// An inner iterative solver hit its iteration cap.
class ConvergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace sarseg

#endif  // SARSEG_ERRORS_HPP
