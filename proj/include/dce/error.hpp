#pragma once

#include <stdexcept>
#include <string>

namespace dce {

// Base of every error the library throws. Callers that only care about
// "something in the toolkit failed" can catch this one type.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Precondition or invariant violated by an argument (bad spec, bad count).
class DomainError : public Error {
 public:
  using Error::Error;
};

// A coded row matches no level pattern of the experiment.
class DecodeError : public Error {
 public:
  using Error::Error;
};

// Non-finite utilities, log-likelihood underflow and friends.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Information matrix is (numerically) singular: the design cannot identify
// every parameter.
class SingularDesign : public NumericError {
 public:
  using NumericError::NumericError;
};

// Malformed input file (CSV, JSON). Messages carry the line number.
class FormatError : public Error {
 public:
  using Error::Error;
};

// A single cell holds a value outside its allowed set.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Responses and design rows do not line up.
class AlignmentError : public Error {
 public:
  using Error::Error;
};

// Blocks cannot be concatenated.
class MergeError : public Error {
 public:
  using Error::Error;
};

// Choice data violates the one-choice-per-set invariant.
class DataError : public Error {
 public:
  using Error::Error;
};

// Model cannot be estimated (non-identified column, singular Hessian).
class EstimationError : public Error {
 public:
  using Error::Error;
};

// Willingness to pay is not defined for the given fit.
class WtpError : public Error {
 public:
  using Error::Error;
};

}  // namespace dce
