#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace psgd {

struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct SingularFactorError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Violated call contract (e.g. a loss mask with no active step).
struct ContractViolation : std::logic_error {
  using std::logic_error::logic_error;
};

// A task spec that cannot produce valid samples (T too short, bad dims).
struct SpecError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Non-finite loss or gradient during training. The iteration index is
// filled in by the training loop that observed the failure.
struct DivergedError : std::runtime_error {
  explicit DivergedError(const std::string& what, std::int64_t iter = -1)
      : std::runtime_error(what), iteration(iter) {}
  std::int64_t iteration;
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// compare() inputs that do not share the required fields.
struct ComparisonError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

}  // namespace psgd
