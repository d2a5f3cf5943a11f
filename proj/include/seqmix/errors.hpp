#pragma once

#include <stdexcept>
#include <string>

namespace seqmix {

// Shape/dimension mismatch between tensor operands.
struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Invalid or inconsistent configuration (maps to CLI exit code 2).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// API contract violation (non-scalar loss, mismatched cache, ...).
struct ContractError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Non-finite value produced where the contract promises finiteness.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed or self-inconsistent input data.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace seqmix
