#pragma once

#include <stdexcept>
#include <string>

namespace coppkit {

/// Base class for every error thrown by the library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Bad arguments, malformed configs, violated preconditions.
struct ValidationError : Error {
  using Error::Error;
};

/// Config document rejected by schema validation; keeps the JSON pointer
/// of the offending key.
struct SchemaError : ValidationError {
  SchemaError(const std::string& pointer, const std::string& what)
      : ValidationError("config error at " + pointer + ": " + what), pointer(pointer) {}
  std::string pointer;
};

/// Model training diverged (non-finite loss) or could not start.
struct TrainingError : Error {
  using Error::Error;
};

/// File ingestion failures; message carries the line number when known.
struct IngestError : Error {
  using Error::Error;
};

/// Root finding / quadrature failed to reach the requested tolerance.
struct NumericError : Error {
  using Error::Error;
};

/// All conformal weights vanished after flooring.
struct DegenerateWeightsError : Error {
  using Error::Error;
};

}  // namespace coppkit
