#pragma once

#include <stdexcept>
#include <string>

namespace spiketime {

// Argument and domain violations use std::invalid_argument / std::domain_error.
// The types below cover failures that callers are expected to handle by kind.

/// Non-finite state inside the ODE solver.
class numeric_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A data file or manifest violates the on-disk contract.
class ingestion_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// No parameter set satisfies the calibration constraints.
class calibration_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Filesystem read/write failure.
class io_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace spiketime
