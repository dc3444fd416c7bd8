#pragma once

#include <stdexcept>
#include <string>

namespace mkvcn {

// Confining profile required: kappa must have a positive liminf.
struct NotConfiningError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// The radius search walked past its cap without satisfying the defining
// predicate; rebuild with a larger r_max allowance.
struct IncreaseRMaxError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Exact transport requested above the size cap; use a sliced/1-d estimate.
struct SizeCapError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Rate fit has no admissible window (pure plateau or too few points).
struct FitImpossibleError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bisection interval contains no sign change of the contraction rate.
struct NoThresholdError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Requested stationary oracle does not exist (e.g. non-integrable density).
struct OracleUndefinedError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Experiment configuration failed validation; message lists offending fields.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace mkvcn
