#pragma once

#include <stdexcept>
#include <string>

namespace cryda {

// Base for all cryda exceptions.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Tensor shapes do not conform for an operation.
struct ShapeError : Error {
    using Error::Error;
};

// An argument violates an operation's contract (bad radius, bad lambda, ...).
struct ParamError : Error {
    using Error::Error;
};

// A numeric precondition failed (row not normalized, label out of range, ...).
struct ValueError : Error {
    using Error::Error;
};

// Dataset-level problems: empty split, missing class, empty noise pool.
struct DataError : Error {
    using Error::Error;
};

// Config file problems: unknown key, unparsable value, infeasible split.
struct ConfigError : Error {
    using Error::Error;
};

// File I/O problems: unreadable path, malformed file, truncated checkpoint.
struct IoError : Error {
    using Error::Error;
};

// A required prior artifact is missing (baseline run, source checkpoint).
struct DependencyError : Error {
    using Error::Error;
};

}  // namespace cryda
