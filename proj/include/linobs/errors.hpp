#pragma once

#include <stdexcept>
#include <string>

namespace linobs {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Bad user-supplied configuration (CLI exit code 2).
struct ConfigError : Error {
    using Error::Error;
};

// Numerical failures: divergence, guard-radius violations, rank loss (CLI exit code 3).
struct NumericalError : Error {
    using Error::Error;
};

struct DivergedError : NumericalError {
    explicit DivergedError(double t_last)
        : NumericalError("ode state became non-finite, last valid t = " + std::to_string(t_last)),
          last_valid_time(t_last) {}
    double last_valid_time;
};

struct GuardRadiusError : NumericalError {
    using NumericalError::NumericalError;
};

struct RankError : NumericalError {
    explicit RankError(long rank, long cols)
        : NumericalError("rank-deficient least-squares system: rank " + std::to_string(rank) +
                         " of " + std::to_string(cols)),
          rank(rank), cols(cols) {}
    long rank;
    long cols;
};

struct DimensionError : Error {
    using Error::Error;
};

}  // namespace linobs
