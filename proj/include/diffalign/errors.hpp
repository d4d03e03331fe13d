#pragma once

#include <stdexcept>
#include <string>

namespace diffalign {

// Base class for all library errors.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad caller-provided values: out-of-domain arguments, malformed or missing
// files, non-finite inputs.
struct InputError : Error {
  using Error::Error;
};

// Dimension mismatches between tensors or between data and a model.
struct ShapeError : InputError {
  using InputError::InputError;
};

// Invalid configuration values or unknown tags.
struct ConfigError : Error {
  using Error::Error;
};

// Numerical failure during an optimization run; carries the failing step.
struct TrainingError : Error {
  TrainingError(const std::string& what, long failed_step)
      : Error(what + " (step " + std::to_string(failed_step) + ")"), step(failed_step) {}
  long step;
};

// Non-finite state encountered while integrating the reverse process.
struct SamplerError : Error {
  SamplerError(const std::string& what, int failed_step)
      : Error(what + " (integration step " + std::to_string(failed_step) + ")"), step(failed_step) {}
  int step;
};

// Unreadable checkpoint or architecture mismatch against the run config.
struct CheckpointError : Error {
  using Error::Error;
};

}  // namespace diffalign
