#pragma once

#include <stdexcept>
#include <string>

namespace metersentry {

/// Base class for every error thrown by the library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Malformed text that could not be parsed (CSV cell, timestamp, number).
struct ParseError : Error {
  using Error::Error;
};

/// Structurally invalid input: wrong header, duplicate timestamp, bad column.
struct SchemaError : Error {
  using Error::Error;
};

/// Input too short or empty for the requested operation.
struct InsufficientDataError : Error {
  using Error::Error;
};

/// Non-finite values where finite ones are required.
struct NumericError : Error {
  using Error::Error;
};

/// Tensor or vector dimensions do not match the operation's contract.
struct ShapeError : Error {
  using Error::Error;
};

/// API called out of sequence (backward without forward, stats on empty buffer).
struct StateError : Error {
  using Error::Error;
};

/// Records supplied out of timestamp order.
struct OrderingError : Error {
  using Error::Error;
};

/// Two inputs that must share a timestamp range do not.
struct AlignmentError : Error {
  using Error::Error;
};

/// Zero-variance input to a distribution test or normalization.
struct DegenerateDistributionError : Error {
  using Error::Error;
};

/// Covariance could not be factorized even after ridge escalation.
struct SingularCovarianceError : Error {
  using Error::Error;
};

/// A column selected for imputation has no observed values at all.
struct CannotImputeError : Error {
  using Error::Error;
};

/// Training loss became non-finite.
struct DivergedTrainingError : Error {
  DivergedTrainingError(const std::string& what, long epoch_arg)
      : Error(what), epoch(epoch_arg) {}
  long epoch;
};

/// Model file failed its magic, version, or checksum validation.
struct CorruptModelError : Error {
  using Error::Error;
};

/// File missing or unreadable/unwritable.
struct IoError : Error {
  using Error::Error;
};

/// A value violated an explicit argument contract (e.g. negative score).
struct ContractError : Error {
  using Error::Error;
};

/// Synthetic anomaly injection outside the generated span.
struct InvalidInjectionError : Error {
  using Error::Error;
};

}  // namespace metersentry
