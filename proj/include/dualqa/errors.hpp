#ifndef DUALQA_ERRORS_HPP
#define DUALQA_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace dualqa {

/// Base class for all toolkit errors.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// -- images ------------------------------------------------------------

struct ShapeMismatchError : Error {
  using Error::Error;
};

struct OutOfBoundsError : Error {
  using Error::Error;
};

struct BudgetTooSmallError : Error {
  using Error::Error;
};

// -- datasets ----------------------------------------------------------

struct TruncatedRecordError : Error {
  using Error::Error;
};

struct InvalidLabelError : Error {
  using Error::Error;
};

struct InsufficientSamplesError : Error {
  using Error::Error;
};

// -- predictors --------------------------------------------------------

struct DivergenceError : Error {
  using Error::Error;
};

struct BadMagicError : Error {
  using Error::Error;
};

struct VersionMismatchError : Error {
  using Error::Error;
};

struct WeightShapeError : Error {
  using Error::Error;
};

// External predictor failures. All four derive from ExternalError so a
// harness can treat "the model broke" uniformly while tests can still
// distinguish the cause.
struct ExternalError : Error {
  using Error::Error;
};

struct ProcessExitError : ExternalError {
  using ExternalError::ExternalError;
};

struct MalformedResponseError : ExternalError {
  using ExternalError::ExternalError;
};

struct IdMismatchError : ExternalError {
  using ExternalError::ExternalError;
};

struct TimeoutError : ExternalError {
  using ExternalError::ExternalError;
};

// -- optimizers --------------------------------------------------------

struct CovarianceDegeneracyError : Error {
  using Error::Error;
};

}  // namespace dualqa

#endif  // DUALQA_ERRORS_HPP
