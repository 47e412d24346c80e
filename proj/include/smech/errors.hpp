#pragma once

#include <stdexcept>
#include <string>

namespace smech {

/// Base class for all library errors.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Invalid configuration, parameters, or usage (CLI exit code 2).
struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

/// Numerical failure during a run: NaNs, singular solves, degenerate
/// fields (CLI exit code 3).
struct NumericalError : Error {
    explicit NumericalError(const std::string& msg) : Error(msg) {}
};

/// Residual/convergence check failed under --strict (CLI exit code 4).
struct StrictCheckError : Error {
    explicit StrictCheckError(const std::string& msg) : Error(msg) {}
};

} // namespace smech
