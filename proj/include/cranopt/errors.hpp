#pragma once

#include <stdexcept>
#include <string>

namespace cranopt {

// Iterative solver ran out of iterations before meeting its tolerance.
struct ConvergenceError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A linear system or matrix operation is too ill-conditioned to trust.
struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// The KKT active set has a constraint that is active with a (numerically)
// zero multiplier, so the sensitivity system is singular.  Callers are
// expected to fall back to finite differences.
struct DegenerateActiveSet : NumericalError {
    using NumericalError::NumericalError;
};

}  // namespace cranopt
